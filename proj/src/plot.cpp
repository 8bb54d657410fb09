// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cstdio>
#include <map>
#include <vector>

#include "ulab/errors.hpp"
#include "ulab/report.hpp"

namespace ulab {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
                                    "#393b79"};
constexpr double kWidth = 520, kHeight = 400;
constexpr double kLeft = 60, kRight = 150, kTop = 30, kBottom = 50;

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string num(double v) { return fmt("%.2f", v); }

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Frame {
  double x0, x1, y0, y1;
  double px(double x) const {
    return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight);
  }
  double py(double y) const {
    return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom);
  }
};

std::string header(const std::string& title) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) + "\" height=\"" +
         num(kHeight) + "\" viewBox=\"0 0 " + num(kWidth) + " " + num(kHeight) +
         "\" font-family=\"sans-serif\" font-size=\"11\">\n"
         "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
         "<text x=\"" + num(kWidth / 2) + "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" +
         escape(title) + "</text>\n";
}

std::string axes(const Frame& f, const std::vector<double>& xticks, const std::string& xlabel,
                 const std::string& ylabel, bool integer_x) {
  std::string s;
  const double xa = f.px(f.x0), xb = f.px(f.x1), ya = f.py(f.y0), yb = f.py(f.y1);
  s += "<path d=\"M" + num(xa) + " " + num(yb) + " V" + num(ya) + " H" + num(xb) +
       "\" fill=\"none\" stroke=\"black\"/>\n";
  for (double x : xticks) {
    s += "<text x=\"" + num(f.px(x)) + "\" y=\"" + num(ya + 16) + "\" text-anchor=\"middle\">" +
         (integer_x ? fmt("%.0f", x) : fmt("%.1f", x)) + "</text>\n";
  }
  for (int i = 0; i <= 5; ++i) {
    const double y = f.y0 + (f.y1 - f.y0) * i / 5.0;
    s += "<text x=\"" + num(xa - 6) + "\" y=\"" + num(f.py(y) + 4) + "\" text-anchor=\"end\">" +
         fmt("%.1f", y) + "</text>\n";
  }
  s += "<text x=\"" + num((xa + xb) / 2) + "\" y=\"" + num(kHeight - 12) +
       "\" text-anchor=\"middle\">" + escape(xlabel) + "</text>\n";
  s += "<text x=\"16\" y=\"" + num((ya + yb) / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
       num((ya + yb) / 2) + ")\">" + escape(ylabel) + "</text>\n";
  return s;
}

std::string legend(const std::vector<std::string>& methods) {
  std::string s;
  for (std::size_t i = 0; i < methods.size(); ++i) {
    const double y = kTop + 10 + 16.0 * static_cast<double>(i);
    const double x = kWidth - kRight + 20;
    s += "<circle cx=\"" + num(x) + "\" cy=\"" + num(y) + "\" r=\"4\" fill=\"" +
         kPalette[i % std::size(kPalette)] + "\"/>\n";
    s += "<text x=\"" + num(x + 10) + "\" y=\"" + num(y + 4) + "\">" + escape(methods[i]) +
         "</text>\n";
  }
  return s;
}

}  // namespace

std::string trajectory_svg(std::span<const RunRecord> records) {
  if (records.empty()) throw InputError("results log is empty");
  const auto methods = methods_in_order(records);
  const Frame f{0, 1, 0, 1};
  std::string s = header("MU vs FE by epoch");
  s += axes(f, {0, 0.2, 0.4, 0.6, 0.8, 1.0}, "Model Utility (MU)", "Forget Efficacy (FE)", false);
  for (std::size_t i = 0; i < methods.size(); ++i) {
    const std::string color = kPalette[i % std::size(kPalette)];
    std::string path;
    for (const auto& r : records) {
      if (r.method != methods[i]) continue;
      path += (path.empty() ? "M" : " L") + num(f.px(r.report.MU)) + " " + num(f.py(r.report.FE));
    }
    s += "<path d=\"" + path + "\" fill=\"none\" stroke=\"" + color +
         "\" stroke-opacity=\"0.4\"/>\n";
    for (const auto& r : records) {
      if (r.method != methods[i]) continue;
      const double radius = r.epoch > 0 ? 3.0 * r.epoch : 1.5;
      s += "<circle cx=\"" + num(f.px(r.report.MU)) + "\" cy=\"" + num(f.py(r.report.FE)) +
           "\" r=\"" + num(radius) + "\" fill=\"" + color +
           "\" fill-opacity=\"0.6\" data-epoch=\"" + std::to_string(r.epoch) + "\"/>\n";
    }
  }
  s += legend(methods);
  return s + "</svg>\n";
}

std::string continual_svg(std::span<const RunRecord> records) {
  if (records.empty()) throw InputError("results log is empty");
  const auto methods = methods_in_order(records);
  int max_sub = 1;
  for (const auto& r : records) max_sub = std::max(max_sub, r.subtask);
  const Frame f{max_sub > 1 ? 1.0 : 0.0, static_cast<double>(max_sub), 0, 1};
  std::vector<double> ticks;
  for (int k = max_sub > 1 ? 1 : 0; k <= max_sub; ++k) ticks.push_back(k);
  std::string s = header("MU across subtasks");
  s += axes(f, ticks, "Subtask", "Model Utility (MU)", true);
  for (std::size_t i = 0; i < methods.size(); ++i) {
    const std::string color = kPalette[i % std::size(kPalette)];
    std::map<int, double> mu;  // last record per subtask
    for (const auto& r : records) {
      if (r.method == methods[i]) mu[r.subtask] = r.report.MU;
    }
    std::string path;
    for (const auto& [k, v] : mu) {
      path += (path.empty() ? "M" : " L") + num(f.px(k)) + " " + num(f.py(v));
    }
    s += "<path d=\"" + path + "\" fill=\"none\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    for (const auto& [k, v] : mu) {
      s += "<circle cx=\"" + num(f.px(k)) + "\" cy=\"" + num(f.py(v)) + "\" r=\"3\" fill=\"" +
           color + "\" data-subtask=\"" + std::to_string(k) + "\"/>\n";
    }
  }
  s += legend(methods);
  return s + "</svg>\n";
}

}  // namespace ulab
