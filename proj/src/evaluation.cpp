#include "fuseret/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fuseret/preprocess.hpp"

namespace fuseret {

CutoffLabels cutoff_binarize(int grade) {
  if (grade < 0 || grade >= kNumGrades) {
    throw std::invalid_argument("cutoff_binarize: grade " + std::to_string(grade));
  }
  CutoffLabels out{};
  for (int k = 0; k < kNumCutoffs; ++k) out[k] = grade >= k + 1 ? 1 : 0;
  return out;
}

CutoffScores cutoff_score(std::span<const double> probs) {
  if (probs.size() != kNumGrades) {
    throw DimensionError("cutoff_score: expected 6 probabilities, got " +
                         std::to_string(probs.size()));
  }
  const double total = std::accumulate(probs.begin(), probs.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-6) {
    throw std::invalid_argument("cutoff_score: probabilities sum to " + std::to_string(total));
  }
  CutoffScores out{};
  for (int k = 0; k < kNumCutoffs; ++k) {
    double tail = 0.0;
    for (int c = k + 1; c < kNumGrades; ++c) tail += probs[static_cast<std::size_t>(c)];
    out[k] = tail;
  }
  return out;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError("roc_auc: " + std::to_string(scores.size()) + " scores, " +
                         std::to_string(labels.size()) + " labels");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the Mann-Whitney U, kept integral so ties contribute exactly.
  std::int64_t twice_u = 0, negatives_below = 0, pos = 0, neg = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::int64_t p = 0, n = 0;
    for (; j < order.size() && scores[order[j]] == scores[order[i]]; ++j) {
      if (!std::isfinite(scores[order[j]])) throw NonFiniteError("roc_auc: non-finite score");
      (labels[order[j]] ? p : n) += 1;
    }
    twice_u += 2 * p * negatives_below + p * n;
    negatives_below += n;
    pos += p;
    neg += n;
    i = j;
  }
  if (pos == 0 || neg == 0) {
    throw UndefinedAucError("roc_auc: labels contain a single class");
  }
  return (0.5 * static_cast<double>(twice_u)) /
         (static_cast<double>(pos) * static_cast<double>(neg));
}

int severest(std::span<const int> crop_grades) {
  if (crop_grades.empty()) throw std::invalid_argument("severest: no predictions");
  return *std::max_element(crop_grades.begin(), crop_grades.end());
}

CutoffScores max_scores(std::span<const CutoffScores> crop_scores) {
  if (crop_scores.empty()) throw std::invalid_argument("max_scores: no crops");
  CutoffScores out = crop_scores.front();
  for (const auto& s : crop_scores)
    for (int k = 0; k < kNumCutoffs; ++k) out[k] = std::max(out[k], s[k]);
  return out;
}

TtaPrediction predict_tta(FusionModel<float>& model, const LoadedSample& sample, int n_crops,
                          Extent3 crop, Rng& rng) {
  if (n_crops < 1) throw std::invalid_argument("predict_tta: n_crops must be >= 1");
  NoGradGuard no_grad;
  const ModelConfig& mc = model.config();
  const bool use2d = mc.modality != Modality::octa_only;
  const bool use3d = mc.modality != Modality::cfp_only;
  const Index N = n_crops;

  TensorF x2d, x3d;
  if (use2d) {
    // One image for all crops: encoded once, features repeated.
    Shape s{1};
    s.insert(s.end(), sample.image.shape().begin(), sample.image.shape().end());
    x2d = sample.image.reshape(s);
  }
  std::vector<Extent3> offsets;
  for (Index n = 0; n < N; ++n) offsets.push_back(draw_crop_offsets(sample.volume.shape(), crop, rng));
  if (use3d) {
    const Index per = sample.volume.dim(0) * crop[0] * crop[1] * crop[2];
    x3d = TensorF({N, sample.volume.dim(0), crop[0], crop[1], crop[2]});
    for (Index n = 0; n < N; ++n) {
      auto c = crop3d(sample.volume, crop, offsets[static_cast<std::size_t>(n)]);
      std::copy(c.data().begin(), c.data().end(), x3d.data().begin() + n * per);
    }
  }

  TensorF f2d, f3d;
  if (use2d) {
    auto one = model.encoder2d()->encode(x2d, NormMode::eval);
    f2d = TensorF({N, one.dim(1)});
    for (Index n = 0; n < N; ++n)
      std::copy(one.data().begin(), one.data().end(), f2d.data().begin() + n * one.dim(1));
  }
  if (use3d) f3d = model.encoder3d()->encode(x3d, NormMode::eval);
  TensorF features = use2d && use3d ? concat_features(f2d, f3d) : (use2d ? f2d : f3d);
  auto probs = softmax(model.classify(features));

  TtaPrediction out;
  std::vector<CutoffScores> per_crop;
  const Index C = probs.dim(1);
  for (Index n = 0; n < N; ++n) {
    std::vector<double> p(probs.data().begin() + n * C, probs.data().begin() + (n + 1) * C);
    out.crop_grades.push_back(
        static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()));
    const double total = std::accumulate(p.begin(), p.end(), 0.0);
    std::vector<double> q(p);
    for (auto& v : q) v /= total;
    per_crop.push_back(cutoff_score(q));
    out.crop_probs.push_back(std::move(p));
  }
  out.grade = severest(out.crop_grades);
  out.scores = max_scores(per_crop);
  return out;
}

CutoffAucs cutoff_aucs(std::span<const CutoffScores> scores, std::span<const int> grades) {
  if (scores.size() != grades.size()) throw DimensionError("cutoff_aucs: size mismatch");
  CutoffAucs out;
  for (int k = 0; k < kNumCutoffs; ++k) {
    std::vector<double> s;
    std::vector<int> l;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      s.push_back(scores[i][k]);
      l.push_back(cutoff_binarize(grades[i])[k]);
    }
    try {
      out[k] = roc_auc(s, l);
    } catch (const UndefinedAucError&) {
      out[k].reset();
    }
  }
  return out;
}

EvalResult evaluate_model(FusionModel<float>& model, std::span<const LoadedSample> samples,
                          Extent3 crop, const EvalConfig& cfg) {
  if (samples.empty()) throw std::invalid_argument("evaluate_model: empty subset");
  EvalResult r;
  int correct = 0;
  for (const auto& s : samples) {
    Rng rng = stream(cfg.seed, "crops.eval." + s.eye_id);
    const auto pred = predict_tta(model, s, cfg.n_crops, crop, rng);
    r.eye_ids.push_back(s.eye_id);
    r.grades.push_back(s.grade);
    r.predicted.push_back(pred.grade);
    r.scores.push_back(pred.scores);
    ++r.confusion[static_cast<std::size_t>(s.grade)][static_cast<std::size_t>(pred.grade)];
    correct += pred.grade == s.grade;
  }
  r.auc = cutoff_aucs(r.scores, r.grades);
  r.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
  return r;
}

}  // namespace fuseret
