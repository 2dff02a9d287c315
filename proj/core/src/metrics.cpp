#include "fundus/metrics.hpp"

#include <cstdio>
#include <stdexcept>

#include "json.hpp"

namespace fundus::train {

using nlohmann::json;

ClassScores class_scores(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) {
  ClassScores s;
  const auto d = [](std::uint64_t v) { return static_cast<double>(v); };
  s.precision = tp + fp == 0 ? 0.0 : d(tp) / d(tp + fp);
  s.sensitivity = tp + fn == 0 ? 0.0 : d(tp) / d(tp + fn);
  const double denom = s.precision + s.sensitivity;
  s.f1 = denom == 0.0 ? 0.0 : 2.0 * (s.sensitivity * s.precision) / denom;
  return s;
}

MetricsReport metrics_from_confusion(const ConfusionMatrix& cm, std::string model, double train_ratio,
                                     std::uint64_t seed) {
  if (cm.total() == 0) throw std::invalid_argument("confusion matrix is empty");
  MetricsReport r;
  r.model = std::move(model);
  r.train_ratio = train_ratio;
  r.seed = seed;
  r.confusion = cm;
  r.accuracy = static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
  r.macular_degeneration = class_scores(cm.tp, cm.fp, cm.fn);
  r.healthy = class_scores(cm.tn, cm.fn, cm.fp);
  return r;
}

namespace {

json scores_json(const ClassScores& s) {
  return {{"precision", s.precision}, {"sensitivity", s.sensitivity}, {"f1", s.f1}};
}

ClassScores scores_from(const json& j) {
  return {j.at("precision").get<double>(), j.at("sensitivity").get<double>(), j.at("f1").get<double>()};
}

json to_json_value(const MetricsReport& r) {
  return {{"model", r.model},
          {"split", {{"train_ratio", r.train_ratio}, {"seed", r.seed}}},
          {"accuracy", r.accuracy},
          {"confusion", {{"tp", r.confusion.tp}, {"tn", r.confusion.tn}, {"fp", r.confusion.fp}, {"fn", r.confusion.fn}}},
          {"per_class",
           {{"healthy", scores_json(r.healthy)}, {"macular_degeneration", scores_json(r.macular_degeneration)}}}};
}

MetricsReport from_json_value(const json& j) {
  MetricsReport r;
  r.model = j.at("model").get<std::string>();
  r.train_ratio = j.at("split").at("train_ratio").get<double>();
  r.seed = j.at("split").at("seed").get<std::uint64_t>();
  r.accuracy = j.at("accuracy").get<double>();
  const auto& c = j.at("confusion");
  r.confusion = {c.at("tp").get<std::uint64_t>(), c.at("tn").get<std::uint64_t>(), c.at("fp").get<std::uint64_t>(),
                 c.at("fn").get<std::uint64_t>()};
  r.healthy = scores_from(j.at("per_class").at("healthy"));
  r.macular_degeneration = scores_from(j.at("per_class").at("macular_degeneration"));
  return r;
}

template <typename F>
auto parse_or_throw(const std::string& text, F&& f) {
  try {
    return f(json::parse(text));
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed report JSON: ") + e.what());
  }
}

std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

}  // namespace

std::string report_to_json(const MetricsReport& report) { return to_json_value(report).dump(2) + "\n"; }

MetricsReport report_from_json(const std::string& text) {
  return parse_or_throw(text, [](const json& j) { return from_json_value(j); });
}

std::string reports_to_json(std::span<const MetricsReport> reports) {
  json arr = json::array();
  for (const auto& r : reports) arr.push_back(to_json_value(r));
  return arr.dump(2) + "\n";
}

std::vector<MetricsReport> reports_from_json(const std::string& text) {
  return parse_or_throw(text, [](const json& j) {
    std::vector<MetricsReport> out;
    for (const auto& item : j) out.push_back(from_json_value(item));
    return out;
  });
}

std::string render_table(std::span<const MetricsReport> reports) {
  const std::vector<std::string> header{"Model", "Split",   "Accuracy", "Healthy P", "Healthy S",
                                        "Healthy F1", "MD P", "MD S",     "MD F1"};
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : reports) {
    const auto train_pct = static_cast<int>(r.train_ratio * 100.0 + 0.5);
    rows.push_back({r.model, std::to_string(train_pct) + "%+" + std::to_string(100 - train_pct) + "%",
                    fixed3(r.accuracy), fixed3(r.healthy.precision), fixed3(r.healthy.sensitivity),
                    fixed3(r.healthy.f1), fixed3(r.macular_degeneration.precision),
                    fixed3(r.macular_degeneration.sensitivity), fixed3(r.macular_degeneration.f1)});
  }
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) {
    width[c] = header[c].size();
    for (const auto& row : rows) width[c] = std::max(width[c], row[c].size());
  }
  auto line = [&](const std::vector<std::string>& cells) {
    std::string out;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c) out += " | ";
      const std::size_t pad = width[c] - cells[c].size();
      out += c == 0 ? cells[c] + std::string(pad, ' ') : std::string(pad, ' ') + cells[c];
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out + "\n";
  };
  std::string out = line(header);
  std::string rule;
  for (std::size_t c = 0; c < width.size(); ++c) rule += (c ? "-+-" : "") + std::string(width[c], '-');
  out += rule + "\n";
  for (const auto& row : rows) out += line(row);
  return out;
}

}  // namespace fundus::train
