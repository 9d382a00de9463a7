#include "deva/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace deva {

namespace {

// Round half to even after clamping, as numpy's round does.
double rounded_class(double x, double bound) { return std::nearbyint(std::clamp(x, -bound, bound)); }

// Index of the bin (edges[i], edges[i + 1]] holding x.
int bin_index(double x, std::span<const double> edges) {
  for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
    if (x > edges[i] && x <= edges[i + 1]) return static_cast<int>(i);
  }
  return static_cast<int>(edges.size()) - 2;
}

double fraction_equal(const std::vector<double>& a, const std::vector<double>& b) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < a.size(); ++i) hits += a[i] == b[i];
  return static_cast<double>(hits) / static_cast<double>(a.size());
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

double weighted_f1(std::span<const int> truth, std::span<const int> pred) {
  if (truth.size() != pred.size()) throw std::invalid_argument("weighted_f1: length mismatch");
  if (truth.empty()) return 0.0;
  double total = 0.0;
  for (int cls : {0, 1}) {
    std::size_t tp = 0, fp = 0, fn = 0, support = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      const bool t = truth[i] == cls, p = pred[i] == cls;
      support += t;
      tp += t && p;
      fp += !t && p;
      fn += t && !p;
    }
    if (support == 0) continue;
    const double denom = static_cast<double>(2 * tp + fp + fn);
    const double f1 = denom > 0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
    total += f1 * static_cast<double>(support);
  }
  return total / static_cast<double>(truth.size());
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("pearson: length mismatch");
  const auto n = static_cast<double>(a.size());
  if (a.empty()) return 0.0;
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

MetricsReport compute_metrics(std::span<const double> preds, std::span<const double> labels,
                              double label_range) {
  if (preds.size() != labels.size())
    throw std::invalid_argument("metrics: " + std::to_string(preds.size()) + " predictions for " +
                                std::to_string(labels.size()) + " labels");
  if (preds.empty()) throw std::invalid_argument("metrics: no samples");
  if (label_range != 3.0 && label_range != 1.0)
    throw std::invalid_argument("metrics: label range must be 3 or 1");

  MetricsReport r;
  r.count = preds.size();

  std::vector<int> t_incl, p_incl, t_excl, p_excl;
  double abs_sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    t_incl.push_back(labels[i] >= 0.0);
    p_incl.push_back(preds[i] >= 0.0);
    if (labels[i] != 0.0) {
      t_excl.push_back(labels[i] > 0.0);
      p_excl.push_back(preds[i] > 0.0);
    }
    abs_sum += std::abs(preds[i] - labels[i]);
  }
  auto accuracy = [](const std::vector<int>& t, const std::vector<int>& p) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < t.size(); ++i) hits += t[i] == p[i];
    return t.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(t.size());
  };
  r.nonzero_count = t_excl.size();
  r.acc2_incl = accuracy(t_incl, p_incl);
  r.acc2_excl = accuracy(t_excl, p_excl);
  r.f1_incl = weighted_f1(t_incl, p_incl);
  r.f1_excl = weighted_f1(t_excl, p_excl);

  if (label_range == 3.0) {
    std::vector<double> p7, l7, p5, l5;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      p7.push_back(rounded_class(preds[i], 3.0));
      l7.push_back(rounded_class(labels[i], 3.0));
      p5.push_back(rounded_class(preds[i], 2.0));
      l5.push_back(rounded_class(labels[i], 2.0));
    }
    r.acc7 = fraction_equal(p7, l7);
    r.acc5 = fraction_equal(p5, l5);
  } else {
    static constexpr double kEdges3[] = {-1.01, -0.1, 0.1, 1.01};
    static constexpr double kEdges5[] = {-1.01, -0.7, -0.1, 0.1, 0.7, 1.01};
    std::vector<double> p3, l3, p5, l5;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const double p = std::clamp(preds[i], -1.0, 1.0), l = std::clamp(labels[i], -1.0, 1.0);
      p3.push_back(bin_index(p, kEdges3));
      l3.push_back(bin_index(l, kEdges3));
      p5.push_back(bin_index(p, kEdges5));
      l5.push_back(bin_index(l, kEdges5));
    }
    r.acc3 = fraction_equal(p3, l3);
    r.acc5 = fraction_equal(p5, l5);
  }
  r.mae = abs_sum / static_cast<double>(preds.size());
  r.corr = pearson(preds, labels);
  return r;
}

nlohmann::json MetricsReport::to_json() const {
  return {{"count", count},           {"nonzero_count", nonzero_count},
          {"acc2_incl_zero", acc2_incl}, {"acc2_excl_zero", acc2_excl},
          {"f1_incl_zero", f1_incl},  {"f1_excl_zero", f1_excl},
          {"acc3", optional_json(acc3)}, {"acc5", acc5},
          {"acc7", optional_json(acc7)}, {"mae", mae},
          {"corr", corr}};
}

nlohmann::json IntervalReport::to_json() const {
  return {{"interval", name},
          {"count", count},
          {"metrics", metrics ? metrics->to_json() : nlohmann::json(nullptr)}};
}

std::vector<IntervalReport> fine_grained_eval(std::span<const double> preds,
                                              std::span<const double> labels, double label_range) {
  if (preds.size() != labels.size()) throw std::invalid_argument("fine_grained_eval: length mismatch");
  if (label_range != 3.0 && label_range != 1.0)
    throw std::invalid_argument("fine_grained_eval: label range must be 3 or 1");
  const double s = label_range / 3.0;
  struct Interval {
    const char* name;
    double lo, hi;
    bool closed_low;  // [lo, hi) when true, (lo, hi] otherwise
  };
  // The outer intervals also take labels beyond the nominal range.
  static constexpr Interval kIntervals[] = {
      {"[-3,-2)", -INFINITY, -2, true}, {"[-2,-1)", -2, -1, true}, {"[-1,0)", -1, 0, true},
      {"(0,+1]", 0, 1, false},          {"(+1,+2]", 1, 2, false},  {"(+2,+3]", 2, INFINITY, false},
  };
  std::vector<IntervalReport> out;
  auto score = [&](const std::string& name, auto&& member) {
    std::vector<double> p, l;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (member(labels[i])) {
        p.push_back(preds[i]);
        l.push_back(labels[i]);
      }
    }
    IntervalReport rep{name, p.size(), std::nullopt};
    if (!p.empty()) rep.metrics = compute_metrics(p, l, label_range);
    out.push_back(std::move(rep));
  };
  for (const auto& iv : kIntervals) {
    const double lo = iv.lo * s, hi = iv.hi * s;
    score(iv.name, [&](double y) { return iv.closed_low ? (y >= lo && y < hi) : (y > lo && y <= hi); });
  }
  score("0", [](double y) { return y == 0.0; });
  return out;
}

}  // namespace deva
