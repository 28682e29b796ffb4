#include "gfusion/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

namespace gfusion {

using json = nlohmann::json;

double ConfusionMatrix::accuracy() const {
  const std::size_t n = total();
  return n == 0 ? 0.0 : static_cast<double>(tp + tn) / static_cast<double>(n);
}

namespace {

json class_json(const ClassMetrics& m) {
  return json{{"precision", m.precision},
              {"recall", m.recall},
              {"f1", m.f1},
              {"support", m.support}};
}

ClassMetrics class_from_json(const json& j) {
  return {j.at("precision").get<double>(), j.at("recall").get<double>(),
          j.at("f1").get<double>(), j.at("support").get<std::size_t>()};
}

}  // namespace

json to_json(const MetricsReport& r) {
  return json{{"precision", r.precision},
              {"recall", r.recall},
              {"f1", r.f1},
              {"accuracy", r.confusion.accuracy()},
              {"negative", class_json(r.negative)},
              {"positive", class_json(r.positive)},
              {"confusion",
               {{"tp", r.confusion.tp},
                {"fp", r.confusion.fp},
                {"tn", r.confusion.tn},
                {"fn", r.confusion.fn}}}};
}

MetricsReport metrics_report_from_json(const json& j) {
  try {
    MetricsReport r;
    r.precision = j.at("precision").get<double>();
    r.recall = j.at("recall").get<double>();
    r.f1 = j.at("f1").get<double>();
    r.negative = class_from_json(j.at("negative"));
    r.positive = class_from_json(j.at("positive"));
    const json& c = j.at("confusion");
    r.confusion = {c.at("tp").get<std::size_t>(), c.at("fp").get<std::size_t>(),
                   c.at("tn").get<std::size_t>(), c.at("fn").get<std::size_t>()};
    return r;
  } catch (const json::exception& e) {
    throw MetricsError(std::string("malformed metrics object: ") + e.what());
  }
}

ConfusionMatrix confusion(std::span<const int> labels, std::span<const int> preds) {
  if (labels.size() != preds.size()) {
    throw MetricsError("confusion: " + std::to_string(labels.size()) + " labels but " +
                       std::to_string(preds.size()) + " predictions");
  }
  if (labels.empty()) throw MetricsError("confusion: no samples");
  ConfusionMatrix c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    const int p = preds[i];
    if ((y != 0 && y != 1) || (p != 0 && p != 1)) {
      throw MetricsError("confusion: labels and predictions must be 0 or 1");
    }
    if (y == 1) {
      (p == 1 ? c.tp : c.fn) += 1;
    } else {
      (p == 1 ? c.fp : c.tn) += 1;
    }
  }
  return c;
}

namespace {

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

ClassMetrics class_metrics(std::size_t hit, std::size_t false_pos,
                           std::size_t false_neg) {
  ClassMetrics m;
  m.precision = ratio(hit, hit + false_pos);
  m.recall = ratio(hit, hit + false_neg);
  const double sum = m.precision + m.recall;
  m.f1 = sum == 0.0 ? 0.0 : 2.0 * m.precision * m.recall / sum;
  m.support = hit + false_neg;
  return m;
}

}  // namespace

MetricsReport weighted_prf(const ConfusionMatrix& c) {
  if (c.total() == 0) throw MetricsError("weighted_prf: empty confusion matrix");
  MetricsReport r;
  r.confusion = c;
  r.positive = class_metrics(c.tp, c.fp, c.fn);
  r.negative = class_metrics(c.tn, c.fn, c.fp);
  const double total = static_cast<double>(c.total());
  const double wp = static_cast<double>(r.positive.support) / total;
  const double wn = static_cast<double>(r.negative.support) / total;
  r.precision = wn * r.negative.precision + wp * r.positive.precision;
  r.recall = wn * r.negative.recall + wp * r.positive.recall;
  r.f1 = wn * r.negative.f1 + wp * r.positive.f1;
  return r;
}

std::vector<Prediction> load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MetricsError("cannot open predictions " + path.string());
  std::vector<Prediction> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path.string() + ": line " + std::to_string(line_no);
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw MetricsError(where + ": malformed JSON: " + e.what());
    }
    if (!obj.is_object() || !obj.contains("id") || !obj["id"].is_string()) {
      throw MetricsError(where + ": missing string field 'id'");
    }
    if (!obj.contains("pred") || !obj["pred"].is_number_integer()) {
      throw MetricsError(where + ": missing integer field 'pred'");
    }
    Prediction p;
    p.id = obj["id"].get<std::string>();
    const auto pred = obj["pred"].get<long long>();
    if (pred != 0 && pred != 1) throw MetricsError(where + ": pred must be 0 or 1");
    p.pred = static_cast<int>(pred);
    if (obj.contains("score")) {
      if (!obj["score"].is_number()) throw MetricsError(where + ": score must be a number");
      p.score = obj["score"].get<double>();
    }
    out.push_back(std::move(p));
  }
  return out;
}

ScoreResult score_predictions(const Manifest& manifest,
                              std::span<const Prediction> predictions, Split split) {
  std::map<std::string, int> by_id;
  for (const Prediction& p : predictions) {
    if (!by_id.emplace(p.id, p.pred).second) {
      throw MetricsError("duplicate prediction id " + p.id);
    }
  }
  std::set<std::string> known;
  for (const EmbeddingRecord& r : manifest.records) known.insert(r.id);
  for (const auto& [id, pred] : by_id) {
    if (!known.count(id)) {
      throw MetricsError("unknown prediction id " + id + " (not in manifest '" +
                         manifest.dataset + "')");
    }
  }
  // Predictions for other splits are allowed and ignored.
  const auto records = manifest.split(split);
  std::vector<std::string> missing;
  std::vector<int> labels;
  std::vector<int> preds;
  for (const EmbeddingRecord* r : records) {
    auto it = by_id.find(r->id);
    if (it == by_id.end()) {
      missing.push_back(r->id);
      continue;
    }
    labels.push_back(r->label);
    preds.push_back(it->second);
  }
  if (!missing.empty()) {
    std::string msg = std::to_string(missing.size()) + " id(s) missing from predictions:";
    for (std::size_t i = 0; i < missing.size() && i < 10; ++i) msg += " " + missing[i];
    if (missing.size() > 10) msg += " ...";
    throw MetricsError(msg);
  }
  if (labels.empty()) {
    throw MetricsError("split " + std::string(split_name(split)) + " is empty");
  }
  ScoreResult res;
  res.report = weighted_prf(confusion(labels, preds));
  res.scored = labels.size();
  res.expected = records.size();
  return res;
}

ScoreResult score_predictions(const Manifest& manifest,
                              const std::filesystem::path& predictions_path,
                              Split split) {
  const auto preds = load_predictions(predictions_path);
  return score_predictions(manifest, preds, split);
}

std::string percent(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", value * 100.0);
  return buf;
}

std::string render_report(std::vector<std::pair<std::string, MetricsReport>> results,
                          ReportFormat format) {
  std::stable_sort(results.begin(), results.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::ostringstream out;
  if (format == ReportFormat::markdown) {
    out << "| experiment | P (%) | R (%) | F1 (%) |\n";
    out << "|---|---|---|---|\n";
    for (const auto& [tag, r] : results) {
      out << "| " << tag << " | " << percent(r.precision) << " | " << percent(r.recall)
          << " | " << percent(r.f1) << " |\n";
    }
  } else {
    out << "experiment,P,R,F1\n";
    for (const auto& [tag, r] : results) {
      out << tag << ',' << percent(r.precision) << ',' << percent(r.recall) << ','
          << percent(r.f1) << '\n';
    }
  }
  return out.str();
}

void emit_report(const std::vector<std::pair<std::string, MetricsReport>>& results,
                 ReportFormat format, const std::filesystem::path& path) {
  const std::string text = render_report(results, format);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw MetricsError("cannot write report " + path.string());
  out << text;
  if (!out) throw MetricsError("write failed for report " + path.string());
}

}  // namespace gfusion
