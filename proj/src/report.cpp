#include "fuseret/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace fuseret {

namespace {

json auc_json(const CutoffAucs& a) {
  json out = json::object();
  for (int k = 0; k < kNumCutoffs; ++k) {
    out[kCutoffNames[k]] = a[k] ? json(*a[k]) : json(nullptr);
  }
  return out;
}

// %.17g round-trips doubles; undefined cells stay empty.
std::string cell(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", *v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace

std::optional<double> RowSummary::mean_auc() const {
  double total = 0.0;
  int n = 0;
  for (const auto& v : mean) {
    if (v) total += *v, ++n;
  }
  if (n == 0) return std::nullopt;
  return total / n;
}

RowSummary summarize(const std::string& name, std::span<const EvalResult> per_fold) {
  RowSummary row;
  row.name = name;
  std::map<std::string, std::pair<CutoffScores, int>> by_eye;
  std::map<std::string, int> grade_of;
  std::vector<std::string> order;
  for (const auto& r : per_fold) {
    row.folds.push_back(r.auc);
    for (std::size_t i = 0; i < r.eye_ids.size(); ++i) {
      auto [it, fresh] = by_eye.try_emplace(r.eye_ids[i], CutoffScores{}, 0);
      if (fresh) order.push_back(r.eye_ids[i]);
      for (int k = 0; k < kNumCutoffs; ++k) it->second.first[k] += r.scores[i][k];
      ++it->second.second;
      grade_of[r.eye_ids[i]] = r.grades[i];
    }
  }
  for (int k = 0; k < kNumCutoffs; ++k) {
    std::vector<double> vals;
    for (const auto& f : row.folds) {
      if (f[k]) vals.push_back(*f[k]);
    }
    if (vals.empty()) continue;
    double sum = 0.0;
    for (double v : vals) sum += v;
    const double mean = sum / static_cast<double>(vals.size());
    double ss = 0.0;
    for (double v : vals) ss += (v - mean) * (v - mean);
    row.mean[k] = mean;
    row.std[k] = vals.size() > 1 ? std::sqrt(ss / static_cast<double>(vals.size() - 1)) : 0.0;
  }
  std::vector<CutoffScores> pooled_scores;
  std::vector<int> pooled_grades;
  for (const auto& eye : order) {
    auto [scores, count] = by_eye.at(eye);
    for (auto& s : scores) s /= count;
    pooled_scores.push_back(scores);
    pooled_grades.push_back(grade_of.at(eye));
  }
  if (!pooled_scores.empty()) row.pooled = cutoff_aucs(pooled_scores, pooled_grades);
  return row;
}

json EvalReport::to_json() const {
  json rows_json = json::array();
  for (const auto& r : rows) {
    json folds = json::array();
    for (const auto& f : r.folds) folds.push_back(auc_json(f));
    const auto m = r.mean_auc();
    rows_json.push_back({{"row", r.name},
                         {"mean", auc_json(r.mean)},
                         {"std", auc_json(r.std)},
                         {"pooled", auc_json(r.pooled)},
                         {"mean_auc", m ? json(*m) : json(nullptr)},
                         {"folds", folds}});
  }
  return {{"split", split},
          {"cutoffs", std::vector<std::string>(kCutoffNames.begin(), kCutoffNames.end())},
          {"rows", rows_json}};
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out << "row,statistic,fold";
  for (const char* c : kCutoffNames) out << ',' << c;
  out << '\n';
  auto line = [&](const std::string& row, const char* stat, const std::string& fold,
                  const CutoffAucs& a) {
    out << row << ',' << stat << ',' << fold;
    for (const auto& v : a) out << ',' << cell(v);
    out << '\n';
  };
  for (const auto& r : rows) {
    line(r.name, "mean", "", r.mean);
    line(r.name, "std", "", r.std);
    line(r.name, "pooled", "", r.pooled);
    for (std::size_t f = 0; f < r.folds.size(); ++f) line(r.name, "fold", std::to_string(f), r.folds[f]);
  }
  return out.str();
}

std::string EvalReport::to_table() const {
  std::ostringstream out;
  char buf[96];
  std::snprintf(buf, sizeof buf, "%-20s", ("[" + split + "]").c_str());
  out << buf;
  for (const char* c : kCutoffNames) {
    std::snprintf(buf, sizeof buf, " %17s", c);
    out << buf;
  }
  out << '\n';
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-20s", r.name.c_str());
    out << buf;
    for (int k = 0; k < kNumCutoffs; ++k) {
      if (r.mean[k]) {
        std::snprintf(buf, sizeof buf, " %8.4f +- %6.4f", *r.mean[k], *r.std[k]);
      } else {
        std::snprintf(buf, sizeof buf, " %17s", "undefined");
      }
      out << buf;
    }
    out << '\n';
  }
  return out.str();
}

void EvalReport::write(const std::filesystem::path& dir, const std::string& stem) const {
  std::filesystem::create_directories(dir);
  write_text(dir / (stem + ".json"), to_json().dump(2) + "\n");
  write_text(dir / (stem + ".csv"), to_csv());
}

json to_json(const EvalResult& r) {
  json confusion = json::array();
  for (const auto& row : r.confusion) confusion.push_back(row);
  return {{"n", r.eye_ids.size()},
          {"auc", auc_json(r.auc)},
          {"accuracy", r.accuracy},
          {"confusion", confusion}};
}

std::string predictions_csv(const EvalResult& r) {
  std::ostringstream out;
  out << "eye_id,grade,predicted";
  for (const char* c : kCutoffNames) out << ",score" << c;
  out << '\n';
  for (std::size_t i = 0; i < r.eye_ids.size(); ++i) {
    out << r.eye_ids[i] << ',' << r.grades[i] << ',' << r.predicted[i];
    for (double s : r.scores[i]) out << ',' << cell(s);
    out << '\n';
  }
  return out.str();
}

}  // namespace fuseret
