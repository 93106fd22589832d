#include "ear/evaluation.hpp"

#include <cmath>

#include "ear/autograd.hpp"
#include "ear/velocity.hpp"

namespace ear {

using json = nlohmann::json;

Predictor network_predictor(const Network& net) {
  return [&net](const CineRecord& rec) {
    NoGradGuard no_grad;
    return argmax_mask(net.forward(prepare_input(rec, net.dtype())));
  };
}

Predictor identity_predictor() {
  return [](const CineRecord& rec) { return rec.mask; };
}

BinaryMask predict_mask(const Network& net, const CineRecord& record) {
  return postprocess_mask(network_predictor(net)(record));
}

std::optional<Summary> summarize(const std::vector<double>& values) {
  if (values.empty()) return std::nullopt;
  Summary s;
  s.n = static_cast<std::int64_t>(values.size());
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  return s;
}

namespace {

std::optional<double> mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json summary_json(const std::optional<Summary>& s) {
  if (!s) return nullptr;
  return {{"mean", s->mean}, {"sd", s->sd}, {"n", s->n}};
}

}  // namespace

EvalReport evaluate(RecordStore& store, const std::vector<std::size_t>& indices, const Predictor& predict) {
  EvalReport report;
  struct Values {
    std::vector<double> dice, sens, ppv;
    std::int64_t records = 0;
  };
  std::map<std::string, Values> per_subject;
  for (auto idx : indices) {
    const CineRecord& rec = store.get(idx);
    const auto m = compute_metrics(predict(rec), rec.mask);
    const std::string name = rec.subject_id + "/" + rec.slice_id;
    for (const auto& [metric, value] : {std::pair{"dice", m.dice}, {"sensitivity", m.sensitivity}, {"ppv", m.ppv}})
      if (!value) report.warnings.push_back(name + ": " + metric + " undefined (0/0), excluded from averages");
    auto& v = per_subject[rec.subject_id];
    if (m.dice) v.dice.push_back(*m.dice);
    if (m.sensitivity) v.sens.push_back(*m.sensitivity);
    if (m.ppv) v.ppv.push_back(*m.ppv);
    ++v.records;
    report.records.push_back({rec.subject_id, rec.slice_id, m});
  }
  std::vector<double> dice, sens, ppv;
  for (const auto& [subject, v] : per_subject) {
    SubjectScore s{mean_of(v.dice), mean_of(v.sens), mean_of(v.ppv), v.records};
    if (s.dice) dice.push_back(*s.dice);
    if (s.sensitivity) sens.push_back(*s.sensitivity);
    if (s.ppv) ppv.push_back(*s.ppv);
    report.subjects[subject] = s;
  }
  report.dice = summarize(dice);
  report.sensitivity = summarize(sens);
  report.ppv = summarize(ppv);
  return report;
}

json to_json(const MetricReport& m) {
  return {{"dice", optional_json(m.dice)},
          {"sensitivity", optional_json(m.sensitivity)},
          {"ppv", optional_json(m.ppv)},
          {"dice_undefined", !m.dice},
          {"sensitivity_undefined", !m.sensitivity},
          {"ppv_undefined", !m.ppv},
          {"tp", m.tp},
          {"fp", m.fp},
          {"fn", m.fn},
          {"tn", m.tn}};
}

json to_json(const EvalReport& report) {
  json records = json::array();
  for (const auto& r : report.records)
    records.push_back({{"subject_id", r.subject_id}, {"slice_id", r.slice_id}, {"metrics", to_json(r.metrics)}});
  json subjects = json::object();
  for (const auto& [id, s] : report.subjects)
    subjects[id] = {{"dice", optional_json(s.dice)},
                    {"sensitivity", optional_json(s.sensitivity)},
                    {"ppv", optional_json(s.ppv)},
                    {"records", s.records}};
  return {{"aggregation", "subject-level mean and sample sd"},
          {"records", records},
          {"subjects", subjects},
          {"aggregate",
           {{"dice", summary_json(report.dice)},
            {"sensitivity", summary_json(report.sensitivity)},
            {"ppv", summary_json(report.ppv)}}},
          {"warnings", report.warnings}};
}

}  // namespace ear
