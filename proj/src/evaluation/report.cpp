#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>

#include <json.hpp>
#include <openssl/evp.h>

#include "kim/error.hpp"
#include "kim/evaluation.hpp"

namespace kim {

using nlohmann::json;

namespace {

constexpr const char* kSchema = "kim-eval/1";

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fixed3(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw IoError("failed writing '" + path + "'");
}

}  // namespace

const char* const kReportCsvHeader =
    "policy_id,checkpoint_hash,env,noise_level,n_rollouts,success_rate,mean_reward,std_reward,"
    "mean_coverage,mean_max_coverage,aborted,ci_level,ci_mean,ci_lo,ci_hi,retention";

std::string reports_to_csv(std::span<const EvalReport> reports) {
  std::string out = std::string(kReportCsvHeader) + "\n";
  for (const auto& r : reports) {
    out += csv_field(r.policy_id) + "," + csv_field(r.checkpoint_hash) + "," +
           std::string(to_string(r.env)) + "," + num(r.noise_level) + "," +
           std::to_string(r.rollouts.size()) + "," + num(r.success_rate) + "," +
           num(r.mean_reward) + "," + num(r.std_reward) + "," + num(r.mean_coverage) + "," +
           num(r.mean_max_coverage) + "," + std::to_string(r.aborted) + ",";
    if (r.ci) {
      out += num(r.ci->level) + "," + num(r.ci->mean) + "," + num(r.ci->lo) + "," + num(r.ci->hi);
    } else {
      out += ",,,";
    }
    out += "," + (r.retention ? num(*r.retention) : std::string()) + "\n";
  }
  return out;
}

std::string reports_to_json(std::span<const EvalReport> reports) {
  json arr = json::array();
  for (const auto& r : reports) {
    json rolls = json::array();
    for (const auto& x : r.rollouts) {
      json j{{"seed", x.seed}, {"steps", x.outcome.steps}, {"aborted", x.aborted}};
      if (r.env == EnvId::lander) {
        j["success"] = x.outcome.success;
        j["terminal"] = std::string(to_string(x.outcome.terminal));
      } else {
        j["reward"] = x.outcome.reward;
        j["coverage"] = x.outcome.coverage;
        j["max_coverage"] = x.outcome.max_coverage;
        j["T"] = x.outcome.T;
      }
      if (x.aborted) j["fault"] = x.fault;
      rolls.push_back(std::move(j));
    }
    json j{{"policy_id", r.policy_id},
           {"checkpoint_hash", r.checkpoint_hash},
           {"env", std::string(to_string(r.env))},
           {"noise_level", r.noise_level},
           {"success_rate", r.success_rate},
           {"mean_reward", r.mean_reward},
           {"std_reward", r.std_reward},
           {"mean_coverage", r.mean_coverage},
           {"mean_max_coverage", r.mean_max_coverage},
           {"aborted", r.aborted},
           {"rollouts", std::move(rolls)}};
    if (r.ci) {
      j["ci"] = {{"level", r.ci->level}, {"mean", r.ci->mean}, {"lo", r.ci->lo},
                 {"hi", r.ci->hi}, {"multiplier", r.ci->multiplier}};
    }
    if (r.retention) j["retention"] = *r.retention;
    arr.push_back(std::move(j));
  }
  return json{{"schema", kSchema}, {"reports", std::move(arr)}}.dump(2) + "\n";
}

std::vector<EvalReport> reports_from_json(std::string_view text) {
  std::vector<EvalReport> out;
  try {
    const json doc = json::parse(text);
    if (doc.at("schema").get<std::string>() != kSchema) {
      throw ContractViolation("unsupported report schema '" + doc.at("schema").get<std::string>() + "'");
    }
    for (const auto& j : doc.at("reports")) {
      EvalReport r;
      r.policy_id = j.at("policy_id").get<std::string>();
      r.checkpoint_hash = j.at("checkpoint_hash").get<std::string>();
      r.env = env_from_string(j.at("env").get<std::string>());
      r.noise_level = j.at("noise_level").get<double>();
      r.success_rate = j.at("success_rate").get<double>();
      r.mean_reward = j.at("mean_reward").get<double>();
      r.std_reward = j.at("std_reward").get<double>();
      r.mean_coverage = j.at("mean_coverage").get<double>();
      r.mean_max_coverage = j.at("mean_max_coverage").get<double>();
      r.aborted = j.at("aborted").get<std::size_t>();
      for (const auto& x : j.at("rollouts")) {
        Rollout ro;
        ro.seed = x.at("seed").get<std::uint64_t>();
        ro.outcome.steps = x.at("steps").get<int>();
        ro.aborted = x.at("aborted").get<bool>();
        ro.fault = x.value("fault", std::string());
        if (r.env == EnvId::lander) {
          ro.outcome.success = x.at("success").get<bool>();
          const auto t = x.at("terminal").get<std::string>();
          for (auto k : {Terminal::none, Terminal::landed, Terminal::crashed, Terminal::timeout}) {
            if (to_string(k) == t) ro.outcome.terminal = k;
          }
        } else {
          ro.outcome.reward = x.at("reward").get<double>();
          ro.outcome.coverage = x.at("coverage").get<double>();
          ro.outcome.max_coverage = x.at("max_coverage").get<double>();
          ro.outcome.T = x.at("T").get<int>();
        }
        r.rollouts.push_back(std::move(ro));
      }
      if (j.contains("ci")) {
        const auto& c = j.at("ci");
        r.ci = ConfidenceInterval{c.at("level").get<double>(), c.at("mean").get<double>(),
                                  c.at("lo").get<double>(), c.at("hi").get<double>(),
                                  c.at("multiplier").get<double>()};
      }
      if (j.contains("retention")) r.retention = j.at("retention").get<double>();
      out.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw ContractViolation(std::string("malformed report JSON: ") + e.what());
  }
  return out;
}

void export_report(std::span<const EvalReport> reports, const std::string& path,
                   const std::string& format) {
  if (format == "json") {
    write_text(path, reports_to_json(reports));
  } else if (format == "csv") {
    write_text(path, reports_to_csv(reports));
  } else {
    throw ContractViolation("unknown report format '" + format + "' (json or csv)");
  }
}

// ---------------------------------------------------------------------------

std::string trace_svg(const Track& track, std::span<const TraceGroup> groups, int stride) {
  if (stride < 1) throw ContractViolation("trace stride must be >= 1");
  if (track.tiles.empty()) throw ContractViolation("trace of an empty track");
  std::vector<std::array<double, 2>> left, right;
  for (const auto& t : track.tiles) {
    // Heading is counter-clockwise; the left normal is (-sin, cos).
    const double nx = -std::sin(t.heading), ny = std::cos(t.heading);
    left.push_back({t.cx + track.half_width * nx, t.cy + track.half_width * ny});
    right.push_back({t.cx - track.half_width * nx, t.cy - track.half_width * ny});
  }
  double xmin = std::numeric_limits<double>::infinity(), ymin = xmin;
  double xmax = -xmin, ymax = -xmin;
  auto extend = [&](const std::array<double, 2>& p) {
    xmin = std::min(xmin, p[0]);
    xmax = std::max(xmax, p[0]);
    ymin = std::min(ymin, p[1]);
    ymax = std::max(ymax, p[1]);
  };
  for (const auto& p : left) extend(p);
  for (const auto& p : right) extend(p);
  for (const auto& g : groups) {
    for (const auto& path : g.paths) {
      for (const auto& p : path) extend(p);
    }
  }
  const double margin = 5.0;
  xmin -= margin;
  ymin -= margin;
  xmax += margin;
  ymax += margin;
  // SVG y grows downwards; flip so the picture matches world coordinates.
  auto pt = [&](const std::array<double, 2>& p) {
    return fixed3(p[0] - xmin) + "," + fixed3(ymax - p[1]);
  };
  auto polyline = [&](const std::vector<std::array<double, 2>>& pts, bool closed, int step,
                      const std::string& style) {
    std::string s = closed ? "<polygon" : "<polyline";
    s += " points=\"";
    for (std::size_t i = 0; i < pts.size(); i += static_cast<std::size_t>(step)) {
      if (i) s += ' ';
      s += pt(pts[i]);
    }
    // Always keep the final position.
    if (!closed && pts.size() > 1 && (pts.size() - 1) % static_cast<std::size_t>(step) != 0) {
      s += ' ' + pt(pts.back());
    }
    return s + "\" " + style + "/>\n";
  };

  std::string out = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" +
         fixed3(xmax - xmin) + "\" height=\"" + fixed3(ymax - ymin) + "\" viewBox=\"0 0 " +
         fixed3(xmax - xmin) + " " + fixed3(ymax - ymin) + "\">\n";
  out += "<metadata>track seed=" + std::to_string(track.seed);
  for (const auto& g : groups) {
    out += "; " + xml_escape(g.label) + " checkpoint=" + xml_escape(g.checkpoint_hash);
  }
  out += "</metadata>\n";
  out += "<g id=\"track\" fill=\"none\" stroke=\"#888888\" stroke-width=\"0.3\">\n";
  out += polyline(left, true, 1, "");
  out += polyline(right, true, 1, "");
  out += "</g>\n";
  for (std::size_t k = 0; k < groups.size(); ++k) {
    const auto& g = groups[k];
    out += "<g id=\"group" + std::to_string(k) + "\" fill=\"none\" stroke=\"" + xml_escape(g.color) +
           "\" stroke-width=\"0.4\">\n<title>" + xml_escape(g.label) + "</title>\n";
    for (const auto& path : g.paths) {
      if (!path.empty()) out += polyline(path, false, stride, "");
    }
    out += "</g>\n";
  }
  out += "</svg>\n";
  return out;
}

void export_trace_svg(const Track& track, std::span<const TraceGroup> groups,
                      const std::string& path, int stride) {
  write_text(path, trace_svg(track, groups, stride));
}

std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw IoError("sha256 digest failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

}  // namespace kim
