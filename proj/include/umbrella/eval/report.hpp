#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "umbrella/eval/suite.hpp"

namespace umbrella::eval {

inline std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

inline std::string opt_fmt(const std::optional<double>& x) { return x ? fmt(*x) : std::string(); }

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw StateError("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw StateError("failed writing '" + path + "'");
}

// ---------------------------------------------------------------------- CSV

inline const char* kMetricsHeader =
    "episodes,success_rate,sr_lo,sr_hi,mean_distance,md_lo,md_hi,mean_successful_time,mst_lo,mst_hi,"
    "mean_reward,mean_prog,mean_lane,mean_coll,mean_jerk,mean_speed";

inline std::string metrics_fields(const MetricsSummary& m) {
  std::ostringstream o;
  o << m.episodes << ',' << fmt(m.success_rate) << ',' << fmt(m.success_ci.lo) << ',' << fmt(m.success_ci.hi) << ','
    << fmt(m.mean_distance) << ',' << fmt(m.distance_ci.lo) << ',' << fmt(m.distance_ci.hi) << ','
    << opt_fmt(m.mean_successful_time) << ','
    << (m.successful_time_ci ? fmt(m.successful_time_ci->lo) : "") << ','
    << (m.successful_time_ci ? fmt(m.successful_time_ci->hi) : "") << ',' << fmt(m.mean_reward) << ','
    << fmt(m.mean_prog) << ',' << fmt(m.mean_lane) << ',' << fmt(m.mean_coll) << ',' << fmt(m.mean_jerk) << ','
    << fmt(m.mean_speed);
  return o.str();
}

inline std::string metrics_csv(const std::vector<SuiteRow>& rows) {
  std::string out = std::string("mode,") + kMetricsHeader + "\n";
  for (const auto& r : rows) out += r.mode + "," + metrics_fields(r.metrics) + "\n";
  return out;
}

inline std::string sweep_csv(const std::string& parameter, const std::vector<SweepPoint>& pts) {
  std::string out = "parameter,value," + std::string(kMetricsHeader) + ",error\n";
  const std::string empty_fields(std::count(kMetricsHeader, kMetricsHeader + std::strlen(kMetricsHeader), ','), ',');
  for (const auto& p : pts) {
    out += parameter + "," + fmt(p.value) + ",";
    out += p.metrics ? metrics_fields(*p.metrics) : empty_fields;
    std::string err = p.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    out += "," + err + "\n";
  }
  return out;
}

inline std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::string out = "K,N,H,calls,median_ms,min_ms,max_ms\n";
  for (const auto& r : rows)
    out += std::to_string(r.K) + "," + std::to_string(r.N) + "," + std::to_string(r.H) + "," +
           std::to_string(r.calls) + "," + fmt(r.median_ms) + "," + fmt(r.min_ms) + "," + fmt(r.max_ms) + "\n";
  return out;
}

// -------------------------------------------------------------------- traces

inline nlohmann::json trace_to_json(const EpisodeTrace& tr) {
  using nlohmann::json;
  json steps = json::array();
  for (const auto& s : tr.steps) {
    json j = {{"t", s.t},
              {"a", {s.action.delta_v, s.action.delta_delta}},
              {"r", {s.reward.prog, s.reward.lane, s.reward.coll, s.reward.total}},
              {"x", s.x},
              {"y", s.y},
              {"v", s.v}};
    if (s.plan) {
      json p = {{"entropy", s.plan->entropy}, {"max_weight", s.plan->max_weight}, {"excluded", s.plan->excluded}};
      if (s.plan->k_star) p["k_star"] = *s.plan->k_star;
      if (s.plan->trajectory.size() > 0) {
        json T = json::array();
        for (Eigen::Index c = 0; c < s.plan->trajectory.cols(); ++c)
          T.push_back({s.plan->trajectory(0, c), s.plan->trajectory(1, c)});
        p["T"] = T;
      }
      j["plan"] = p;
    }
    steps.push_back(j);
  }
  return {{"mode", tr.mode},
          {"seed", tr.seed},
          {"initial_hash", tr.initial_hash},
          {"collision", tr.collision},
          {"ego_caused", tr.ego_caused},
          {"goal_reached", tr.goal_reached},
          {"length", tr.length()},
          {"distance", tr.distance()},
          {"steps", steps}};
}

inline std::string traces_jsonl(const std::vector<EpisodeTrace>& traces) {
  std::string out;
  for (const auto& tr : traces) out += trace_to_json(tr).dump() + "\n";
  return out;
}

// ----------------------------------------------------------------------- SVG

namespace svg {

inline std::string esc(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else o += c;
  }
  return o;
}

struct Frame {
  double x0 = 60, y0 = 30, w = 480, h = 260;  // plot area in pixels
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  double px(double x) const { return x0 + (xmax > xmin ? (x - xmin) / (xmax - xmin) : 0.5) * w; }
  double py(double y) const { return y0 + h - (ymax > ymin ? (y - ymin) / (ymax - ymin) : 0.5) * h; }
};

inline std::string header(double W, double H, const std::string& title) {
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << W / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" << esc(title) << "</text>\n";
  return o.str();
}

inline std::string axes(const Frame& f, const std::string& xlabel, const std::string& ylabel, int yticks = 5) {
  std::ostringstream o;
  o << "<line x1=\"" << f.x0 << "\" y1=\"" << f.y0 + f.h << "\" x2=\"" << f.x0 + f.w << "\" y2=\"" << f.y0 + f.h
    << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << f.x0 << "\" y1=\"" << f.y0 << "\" x2=\"" << f.x0 << "\" y2=\"" << f.y0 + f.h
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= yticks; ++i) {
    const double v = f.ymin + (f.ymax - f.ymin) * i / yticks;
    const double y = f.py(v);
    o << "<line x1=\"" << f.x0 - 4 << "\" y1=\"" << y << "\" x2=\"" << f.x0 << "\" y2=\"" << y << "\" stroke=\"black\"/>"
      << "<text x=\"" << f.x0 - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << fmt(std::round(v * 1000) / 1000)
      << "</text>\n";
  }
  o << "<text x=\"" << f.x0 + f.w / 2 << "\" y=\"" << f.y0 + f.h + 34 << "\" text-anchor=\"middle\">" << esc(xlabel)
    << "</text>\n";
  o << "<text x=\"16\" y=\"" << f.y0 + f.h / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << f.y0 + f.h / 2 << ")\">" << esc(ylabel) << "</text>\n";
  return o.str();
}

inline const char* color(std::size_t i) {
  static const char* c[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  return c[i % 6];
}

struct Series {
  std::string name;
  std::vector<double> x, y;
};

inline std::string line_plot(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                             const std::vector<Series>& series) {
  Frame f;
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  f.xmin = xmin;
  f.xmax = xmax;
  f.ymin = std::min(0.0, ymin);
  f.ymax = ymax > f.ymin ? ymax * 1.05 : f.ymin + 1.0;
  std::ostringstream o;
  o << header(600, 340, title) << axes(f, xlabel, ylabel);
  std::vector<double> xs;
  for (const auto& s : series) xs.insert(xs.end(), s.x.begin(), s.x.end());
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  for (double x : xs)
    o << "<text x=\"" << f.px(x) << "\" y=\"" << f.y0 + f.h + 16 << "\" text-anchor=\"middle\">" << fmt(x)
      << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    std::ostringstream pts;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;  // gap
      pts << f.px(s.x[i]) << ',' << f.py(s.y[i]) << ' ';
      o << "<circle cx=\"" << f.px(s.x[i]) << "\" cy=\"" << f.py(s.y[i]) << "\" r=\"3\" fill=\"" << color(k)
        << "\"/>\n";
    }
    o << "<polyline fill=\"none\" stroke=\"" << color(k) << "\" stroke-width=\"1.5\" points=\"" << pts.str()
      << "\"/>\n";
    o << "<text x=\"" << f.x0 + f.w - 4 << "\" y=\"" << f.y0 + 14 + 14 * k << "\" text-anchor=\"end\" fill=\""
      << color(k) << "\">" << esc(s.name) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

struct Bar {
  std::string label;
  double value;
  double lo, hi;
};

inline std::string bar_chart(const std::string& title, const std::string& ylabel, const std::vector<Bar>& bars,
                             double ymax = 1.0) {
  Frame f;
  f.xmin = 0;
  f.xmax = static_cast<double>(bars.size());
  f.ymin = 0;
  f.ymax = ymax;
  std::ostringstream o;
  o << header(600, 340, title) << axes(f, "", ylabel);
  const double slot = f.w / std::max<std::size_t>(1, bars.size());
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const auto& b = bars[i];
    const double x = f.x0 + slot * i + slot * 0.2;
    const double y = f.py(b.value);
    o << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << slot * 0.6 << "\" height=\"" << f.y0 + f.h - y
      << "\" fill=\"" << color(i) << "\"/>\n";
    const double cx = x + slot * 0.3;
    o << "<line x1=\"" << cx << "\" y1=\"" << f.py(b.lo) << "\" x2=\"" << cx << "\" y2=\"" << f.py(b.hi)
      << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << cx << "\" y=\"" << f.y0 + f.h + 16 << "\" text-anchor=\"middle\">" << esc(b.label)
      << "</text>\n";
    o << "<text x=\"" << cx << "\" y=\"" << y - 4 << "\" text-anchor=\"middle\">" << fmt(std::round(b.value * 1000) / 1000)
      << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace svg

inline std::string suite_svg(const std::vector<SuiteRow>& rows) {
  std::vector<svg::Bar> bars;
  for (const auto& r : rows)
    bars.push_back({r.mode, r.metrics.success_rate, r.metrics.success_ci.lo, r.metrics.success_ci.hi});
  return svg::bar_chart("Success rate by mode (95% bootstrap CI)", "success rate", bars);
}

inline std::string sweep_svg(const std::string& parameter, const std::vector<SweepPoint>& pts) {
  svg::Series sr{"success rate", {}, {}}, md{"distance / max", {}, {}};
  double md_max = 0.0;
  for (const auto& p : pts)
    if (p.metrics) md_max = std::max(md_max, p.metrics->mean_distance);
  for (const auto& p : pts) {
    sr.x.push_back(p.value);
    md.x.push_back(p.value);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    sr.y.push_back(p.metrics ? p.metrics->success_rate : nan);
    md.y.push_back(p.metrics && md_max > 0 ? p.metrics->mean_distance / md_max : nan);
  }
  return svg::line_plot("Sweep over " + parameter, parameter, "SR, normalized MD", {sr, md});
}

inline std::string bench_svg(const std::vector<BenchRow>& rows) {
  std::vector<svg::Series> series;
  for (const auto& r : rows) {
    auto it = std::find_if(series.begin(), series.end(),
                           [&](const auto& s) { return s.name == "K=" + std::to_string(r.K); });
    if (it == series.end()) {
      series.push_back({"K=" + std::to_string(r.K), {}, {}});
      it = series.end() - 1;
    }
    it->x.push_back(r.N);
    it->y.push_back(r.median_ms);
  }
  return svg::line_plot("Median plan() time", "N", "ms", series);
}

}  // namespace umbrella::eval
