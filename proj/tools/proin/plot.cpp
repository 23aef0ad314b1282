#include "plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <vector>

namespace proin::cli {

namespace {

constexpr double kPanel = 360;  // px
constexpr double kMargin = 12;

struct View {
  Vec2 lo, hi;
  double scale = 1;
  double x0 = 0;

  std::string pt(const Vec2& p) const {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f,%.2f", x0 + kMargin + (p.x() - lo.x()) * scale,
                  kMargin + 24 + (hi.y() - p.y()) * scale);
    return buf;
  }
};

void polyline(std::ostringstream& os, const View& v, const std::vector<Vec2>& pts, const char* style) {
  if (pts.size() < 2) return;
  os << "<polyline fill=\"none\" " << style << " points=\"";
  for (const auto& p : pts) os << v.pt(p) << ' ';
  os << "\"/>\n";
}

struct Panel {
  std::string title;
  std::vector<std::pair<int, double>> weights;  // node, weight
};

}  // namespace

std::string attention_svg(const Scene& s, const Prediction& pred) {
  std::vector<Panel> panels;
  auto panel_for = [&](const std::string& title) -> Panel& {
    for (auto& p : panels)
      if (p.title == title) return p;
    panels.push_back({title, {}});
    return panels.back();
  };
  for (const auto& r : pred.attention) {
    const std::string title = r.mode < 0 ? r.stage : r.stage + " mode " + std::to_string(r.mode);
    panel_for(title).weights.emplace_back(r.node, r.weight);
  }
  if (panels.empty()) panels.push_back({"prediction", {}});

  // Bounds around the focal agent's surroundings.
  Vec2 lo(-10, -10), hi(10, 10);
  auto grow = [&](const Vec2& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  };
  for (const auto& traj : pred.trajectories)
    for (Eigen::Index t = 0; t < traj.rows(); ++t) grow(traj.row(t).transpose());
  for (const auto& a : s.agents)
    for (int t = 0; t < a.steps(); ++t)
      if (a.observed[t]) grow(a.positions.row(t).transpose());
  lo -= Vec2(5, 5);
  hi += Vec2(5, 5);
  const double span = std::max(hi.x() - lo.x(), hi.y() - lo.y());
  const double scale = (kPanel - 2 * kMargin) / span;
  hi = lo + Vec2(span, span);

  std::ostringstream os;
  const double width = kPanel * static_cast<double>(panels.size());
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << kPanel + 24
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  for (std::size_t i = 0; i < panels.size(); ++i) {
    const View v{lo, hi, scale, kPanel * static_cast<double>(i)};
    os << "<g>\n<rect x=\"" << v.x0 << "\" y=\"0\" width=\"" << kPanel << "\" height=\"" << kPanel + 24
       << "\" fill=\"white\" stroke=\"#ccc\"/>\n";
    os << "<text x=\"" << v.x0 + kMargin << "\" y=\"16\">" << panels[i].title << "</text>\n";
    for (const auto& seg : s.lane_graph.segments)
      polyline(os, v, {seg.start(), seg.end()}, "stroke=\"#bbb\" stroke-width=\"2\"");
    for (int a = 0; a < static_cast<int>(s.agents.size()); ++a) {
      std::vector<Vec2> hist;
      for (int t = 0; t < s.agents[a].steps(); ++t)
        if (s.agents[a].observed[t]) hist.push_back(s.agents[a].positions.row(t).transpose());
      polyline(os, v, hist,
               a == s.focal_index ? "stroke=\"#1f4e9c\" stroke-width=\"2\"" : "stroke=\"#777\" stroke-width=\"1.5\"");
    }
    if (s.has_futures()) {
      const Future& f = s.futures[s.focal_index];
      std::vector<Vec2> gt;
      for (Eigen::Index t = 0; t < f.positions.rows(); ++t)
        if (f.validity[t]) gt.push_back(f.positions.row(t).transpose());
      polyline(os, v, gt, "stroke=\"#2a8a2a\" stroke-width=\"2\" stroke-dasharray=\"4 3\"");
    }
    for (std::size_t k = 0; k < pred.trajectories.size(); ++k) {
      std::vector<Vec2> pts;
      for (Eigen::Index t = 0; t < pred.trajectories[k].rows(); ++t) pts.push_back(pred.trajectories[k].row(t).transpose());
      char style[96];
      std::snprintf(style, sizeof style, "stroke=\"#e07b00\" stroke-width=\"1.5\" stroke-opacity=\"%.3f\"",
                    0.25 + 0.75 * pred.scores[k]);
      polyline(os, v, pts, style);
    }
    for (const auto& [node, w] : panels[i].weights) {
      if (node < 0 || node >= s.lane_graph.size()) continue;
      const std::string c = v.pt(s.lane_graph.segments[node].center);
      const auto comma = c.find(',');
      char circle[160];
      std::snprintf(circle, sizeof circle,
                    "<circle cx=\"%s\" cy=\"%s\" r=\"%.2f\" fill=\"#c0392b\" fill-opacity=\"0.6\"/>\n",
                    c.substr(0, comma).c_str(), c.substr(comma + 1).c_str(), 1.0 + 12.0 * std::sqrt(w));
      os << circle;
    }
    os << "</g>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace proin::cli
