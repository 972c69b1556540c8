#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "semstab/error.hpp"
#include "semstab/io.hpp"
#include "semstab/lbfgs.hpp"
#include "semstab/parallel.hpp"
#include "semstab/rng.hpp"
#include "semstab/vocab.hpp"

namespace semstab {

// Real-valued CSR matrix, the output of the TF-IDF transform.
struct SparseMatrix {
  std::size_t cols = 0;
  std::vector<std::size_t> row_ptr{0};
  std::vector<std::uint32_t> col;
  std::vector<double> val;
  std::vector<std::uint8_t> zero_row;  // 1 where the row had no in-vocabulary counts

  std::size_t rows() const { return row_ptr.size() - 1; }

  void add_row(const std::vector<std::pair<std::uint32_t, double>>& entries) {
    for (const auto& [c, v] : entries) {
      col.push_back(c);
      val.push_back(v);
    }
    row_ptr.push_back(col.size());
    zero_row.push_back(entries.empty() ? 1 : 0);
  }

  double row_dot(std::size_t r, const double* w) const {
    double s = 0.0;
    for (std::size_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k) s += val[k] * w[col[k]];
    return s;
  }

  SparseMatrix select_rows(const std::vector<std::size_t>& rows_wanted) const {
    SparseMatrix out;
    out.cols = cols;
    for (std::size_t r : rows_wanted) {
      for (std::size_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k) {
        out.col.push_back(col[k]);
        out.val.push_back(val[k]);
      }
      out.row_ptr.push_back(out.col.size());
      out.zero_row.push_back(zero_row[r]);
    }
    return out;
  }
};

// ---- TF-IDF -----------------------------------------------------------------

inline constexpr const char* kIdfFormula = "ln((1+N)/(1+df))+1";

struct TfidfTransform {
  std::shared_ptr<const Vocabulary> vocab;
  std::vector<double> idf;
  std::size_t n_docs = 0;
  std::string formula = kIdfFormula;
};

inline TfidfTransform fit_tfidf(const DocumentTermMatrix& train) {
  require(train.rows() >= 1, "model", "TF-IDF needs at least one training row");
  std::vector<std::uint64_t> df(train.cols(), 0);
  for (std::size_t r = 0; r < train.rows(); ++r)
    for (const auto& e : train.row(r)) ++df[e.col];
  TfidfTransform t;
  t.vocab = train.vocabulary_ptr();
  t.n_docs = train.rows();
  const double n = static_cast<double>(train.rows());
  t.idf.resize(df.size());
  for (std::size_t j = 0; j < df.size(); ++j) t.idf[j] = std::log((1.0 + n) / (1.0 + static_cast<double>(df[j]))) + 1.0;
  return t;
}

namespace detail {

inline bool same_columns(const Vocabulary& a, const Vocabulary& b) { return &a == &b || a.terms() == b.terms(); }

}  // namespace detail

// x_ij = count_ij * idf_j, rows scaled to unit L2 norm. Zero rows stay zero.
inline SparseMatrix transform(const DocumentTermMatrix& m, const TfidfTransform& t) {
  require(t.vocab && detail::same_columns(m.vocabulary(), *t.vocab), "model",
          "matrix columns do not match the TF-IDF vocabulary");
  SparseMatrix x;
  x.cols = t.idf.size();
  std::vector<std::pair<std::uint32_t, double>> row;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    row.clear();
    double ss = 0.0;
    for (const auto& e : m.row(r)) {
      const double v = static_cast<double>(e.count) * t.idf[e.col];
      row.emplace_back(e.col, v);
      ss += v * v;
    }
    if (ss > 0.0) {
      const double inv = 1.0 / std::sqrt(ss);
      for (auto& [c, v] : row) v *= inv;
    }
    x.add_row(row);
  }
  return x;
}

// ---- logistic regression ------------------------------------------------------

namespace detail {

inline double log1pexp(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline std::vector<double> signed_labels(const std::vector<int>& y) {
  std::vector<double> s(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    require(y[i] == 0 || y[i] == 1 || y[i] == -1, "model", "labels must be binary");
    s[i] = y[i] == 1 ? 1.0 : -1.0;
  }
  return s;
}

}  // namespace detail

// f(w, b) = 0.5 |w|^2 + C sum_i log(1 + exp(-y_i (w.x_i + b))), with theta =
// [w..., b]. y holds +-1. Writes the gradient into `grad`.
inline double logistic_objective(const SparseMatrix& X, const std::vector<double>& y, double C,
                                 const std::vector<double>& theta, std::vector<double>& grad) {
  const std::size_t n = X.cols;
  grad.assign(n + 1, 0.0);
  double f = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    f += 0.5 * theta[j] * theta[j];
    grad[j] = theta[j];
  }
  const double b = theta[n];
  for (std::size_t i = 0; i < X.rows(); ++i) {
    const double z = X.row_dot(i, theta.data()) + b;
    const double m = -y[i] * z;
    f += C * detail::log1pexp(m);
    const double coef = -C * y[i] * detail::sigmoid(m);
    for (std::size_t k = X.row_ptr[i]; k < X.row_ptr[i + 1]; ++k) grad[X.col[k]] += coef * X.val[k];
    grad[n] += coef;
  }
  return f;
}

struct LogRegFit {
  std::vector<double> w;
  double b = 0.0;
  double objective = 0.0;
  double gradient_norm = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  std::string status;
};

// labels in {0,1} (or -1/+1). `start` optionally seeds [w..., b].
inline LogRegFit train_logreg(const SparseMatrix& X, const std::vector<int>& labels, double C,
                              const LbfgsParams& params = {}, std::optional<std::vector<double>> start = std::nullopt) {
  require(C > 0.0 && std::isfinite(C), "model", "C must be positive and finite");
  require(labels.size() == X.rows(), "model", "labels must align with rows");
  const auto y = detail::signed_labels(labels);
  const bool pos = std::any_of(y.begin(), y.end(), [](double v) { return v > 0; });
  const bool neg = std::any_of(y.begin(), y.end(), [](double v) { return v < 0; });
  require(pos && neg, "model", "training labels contain a single class");
  for (double v : X.val) require(std::isfinite(v), "model", "non-finite feature value");

  std::vector<double> theta = start ? *start : std::vector<double>(X.cols + 1, 0.0);
  require(theta.size() == X.cols + 1, "model", "start vector has the wrong length");
  const auto r = minimize_lbfgs(
      [&](const std::vector<double>& th, std::vector<double>& g) { return logistic_objective(X, y, C, th, g); },
      std::move(theta), params);
  require(std::isfinite(r.value), "model", "non-finite loss");
  LogRegFit fit;
  fit.w.assign(r.x.begin(), r.x.end() - 1);
  fit.b = r.x.back();
  fit.objective = r.value;
  fit.gradient_norm = r.gradient_norm;
  fit.iterations = r.iterations;
  fit.converged = r.converged;
  fit.status = r.status;
  return fit;
}

inline std::vector<double> predict_proba(const SparseMatrix& X, const std::vector<double>& w, double b) {
  require(w.size() == X.cols, "model", "weight vector does not match matrix columns");
  std::vector<double> p(X.rows());
  for (std::size_t i = 0; i < X.rows(); ++i) p[i] = detail::sigmoid(X.row_dot(i, w.data()) + b);
  return p;
}

// Strict rule: positive iff p > 0.5.
inline std::vector<int> threshold(const std::vector<double>& proba) {
  std::vector<int> out(proba.size());
  for (std::size_t i = 0; i < proba.size(); ++i) out[i] = proba[i] > 0.5 ? 1 : 0;
  return out;
}

struct F1Score {
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  bool undefined = false;  // no predicted and no actual positives; f1 reported as 0
};

inline F1Score f1_score(const std::vector<int>& pred, const std::vector<int>& truth) {
  require(pred.size() == truth.size(), "model", "prediction and label counts differ");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == 1, t = truth[i] == 1;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
  }
  F1Score s;
  if (tp + fp > 0) s.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  if (tp + fn > 0) s.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  const std::size_t denom = 2 * tp + fp + fn;
  if (denom == 0) s.undefined = true;
  else s.f1 = 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  return s;
}

inline double f1(const std::vector<int>& pred, const std::vector<int>& truth) { return f1_score(pred, truth).f1; }

// ---- cross-validated C ---------------------------------------------------------

inline const std::vector<double> kDefaultCGrid = {1e-2, 1e-1, 1.0, 10.0, 100.0};

// Stratified fold assignment: each class is shuffled and dealt round-robin.
inline std::vector<std::size_t> stratified_folds(const std::vector<int>& labels, std::size_t folds, std::uint64_t seed) {
  require(folds >= 2, "model", "need at least two folds");
  std::vector<std::size_t> assign(labels.size(), 0);
  Rng rng(seed);
  std::size_t offset = 0;
  for (int cls : {0, 1}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if ((labels[i] == 1) == (cls == 1)) idx.push_back(i);
    rng.shuffle(idx);
    for (std::size_t k = 0; k < idx.size(); ++k) assign[idx[k]] = (k + offset) % folds;
    offset += idx.size();
  }
  return assign;
}

struct CvResult {
  double C = 1.0;
  std::vector<double> grid;
  std::vector<double> mean_f1;                // per grid value
  std::vector<std::vector<double>> fold_f1;   // [grid][fold]
  std::size_t folds = 10;
  std::vector<std::string> warnings;
};

struct CvOptions {
  std::vector<double> grid = kDefaultCGrid;
  std::size_t folds = 10;
  std::uint64_t seed = 0;
  LbfgsParams lbfgs;
  std::size_t workers = 1;
};

// Mean held-out F1 per C over stratified folds; argmax with ties going to the
// smaller C.
inline CvResult select_C_cv(const SparseMatrix& X, const std::vector<int>& labels, const CvOptions& opt = {}) {
  require(!opt.grid.empty(), "model", "empty C grid");
  require(labels.size() == X.rows(), "model", "labels must align with rows");
  CvResult res;
  res.grid = opt.grid;
  std::sort(res.grid.begin(), res.grid.end());
  res.grid.erase(std::unique(res.grid.begin(), res.grid.end()), res.grid.end());
  std::size_t n_pos = 0;
  for (int l : labels) n_pos += l == 1;
  const std::size_t min_class = std::min(n_pos, labels.size() - n_pos);
  require(min_class >= 2, "model", "cross-validation needs at least two samples per class");
  res.folds = opt.folds;
  if (min_class < opt.folds) {
    res.folds = min_class;
    res.warnings.push_back("folds reduced from " + std::to_string(opt.folds) + " to " + std::to_string(min_class) +
                           " (smallest class size)");
  }
  if (res.grid.size() == 1) {
    res.C = res.grid[0];
    res.mean_f1 = {0.0};
    return res;
  }
  const auto assign = stratified_folds(labels, res.folds, opt.seed);
  res.fold_f1.assign(res.grid.size(), std::vector<double>(res.folds, 0.0));
  parallel_for(res.folds, opt.workers, [&](std::size_t f) {
    std::vector<std::size_t> tr, te;
    for (std::size_t i = 0; i < labels.size(); ++i) (assign[i] == f ? te : tr).push_back(i);
    const auto Xtr = X.select_rows(tr), Xte = X.select_rows(te);
    std::vector<int> ytr, yte;
    for (auto i : tr) ytr.push_back(labels[i]);
    for (auto i : te) yte.push_back(labels[i]);
    for (std::size_t g = 0; g < res.grid.size(); ++g) {
      const auto fit = train_logreg(Xtr, ytr, res.grid[g], opt.lbfgs);
      res.fold_f1[g][f] = f1(threshold(predict_proba(Xte, fit.w, fit.b)), yte);
    }
  });
  res.mean_f1.assign(res.grid.size(), 0.0);
  std::size_t best = 0;
  for (std::size_t g = 0; g < res.grid.size(); ++g) {
    for (double v : res.fold_f1[g]) res.mean_f1[g] += v;
    res.mean_f1[g] /= static_cast<double>(res.folds);
    if (res.mean_f1[g] > res.mean_f1[best]) best = g;
  }
  res.C = res.grid[best];
  return res;
}

// ---- classifier bundle -----------------------------------------------------------

struct ClassifierModel {
  std::string method;  // selection method that produced the vocabulary
  int p = 100;         // vocabulary percentile
  std::shared_ptr<const Vocabulary> vocab;
  TfidfTransform tfidf;
  std::vector<double> w;
  double b = 0.0;
  double C = 1.0;
  nlohmann::json metadata = nlohmann::json::object();

  std::size_t size() const { return w.size(); }
};

struct FitOptions {
  CvOptions cv;
  std::optional<double> fixed_C;  // skips cross-validation when set
};

// Builds a vocabulary from `terms` (frequencies taken from the training
// matrix), fits TF-IDF, picks C and trains the final model.
inline ClassifierModel fit_classifier(const DocumentTermMatrix& train, const std::vector<std::string>& terms,
                                      const FitOptions& opt = {}, std::string method = "", int p = 100) {
  require(train.has_labels() && train.rows() > 0, "model", "training matrix must be labeled and non-empty");
  require(!terms.empty(), "model", "empty vocabulary");
  const auto totals = train.column_totals();
  std::vector<std::uint64_t> freqs;
  freqs.reserve(terms.size());
  for (const auto& t : terms) {
    auto j = train.vocabulary().find(t);
    freqs.push_back(j ? totals[*j] : 0);
  }
  auto vocab = std::make_shared<const Vocabulary>(terms, freqs);
  require(vocab->size() == terms.size(), "model", "selected vocabulary contains duplicate terms");
  const auto projected = train.project(vocab);
  ClassifierModel m;
  m.method = std::move(method);
  m.p = p;
  m.vocab = vocab;
  m.tfidf = fit_tfidf(projected);
  const auto X = transform(projected, m.tfidf);
  const auto& y = projected.labels();
  nlohmann::json meta;
  meta["idf_formula"] = m.tfidf.formula;
  meta["train_rows"] = projected.rows();
  if (opt.fixed_C) {
    m.C = *opt.fixed_C;
    meta["C_selection"] = "fixed";
  } else {
    const auto cv = select_C_cv(X, y, opt.cv);
    m.C = cv.C;
    meta["C_selection"] = "stratified_cv";
    meta["folds"] = cv.folds;
    meta["grid"] = cv.grid;
    meta["cv_mean_f1"] = cv.mean_f1;
    if (!cv.warnings.empty()) meta["warnings"] = cv.warnings;
  }
  const auto fit = train_logreg(X, y, m.C, opt.cv.lbfgs);
  m.w = fit.w;
  m.b = fit.b;
  meta["objective"] = fit.objective;
  meta["gradient_norm"] = fit.gradient_norm;
  meta["iterations"] = fit.iterations;
  meta["optimizer_status"] = fit.status;
  m.metadata = std::move(meta);
  return m;
}

// Positive-class probabilities for every row of `m`; the matrix may use any
// vocabulary and is projected onto the model's.
inline std::vector<double> predict_proba(const ClassifierModel& model, const DocumentTermMatrix& m) {
  const auto projected = detail::same_columns(m.vocabulary(), *model.vocab) ? m : m.project(model.vocab);
  return predict_proba(transform(projected, model.tfidf), model.w, model.b);
}

inline F1Score evaluate_f1(const ClassifierModel& model, const DocumentTermMatrix& test) {
  require(test.has_labels(), "model", "test matrix is unlabeled");
  return f1_score(threshold(predict_proba(model, test)), test.labels());
}

// Binary format: "SEMSTMDL", u32 version, u64 header length, JSON header,
// then f64 weights, f64 bias, f64 idf.
inline constexpr char kModelMagic[8] = {'S', 'E', 'M', 'S', 'T', 'M', 'D', 'L'};
inline constexpr std::uint32_t kModelVersion = 1;

inline void save_model(const std::filesystem::path& path, const ClassifierModel& m) {
  nlohmann::json h;
  h["method"] = m.method;
  h["p"] = m.p;
  h["C"] = m.C;
  h["terms"] = m.vocab->terms();
  h["frequencies"] = m.vocab->frequencies();
  h["n_docs"] = m.tfidf.n_docs;
  h["idf_formula"] = m.tfidf.formula;
  h["metadata"] = m.metadata;
  const std::string header = h.dump();
  auto out = open_output(path, true);
  out.write(kModelMagic, 8);
  const std::uint32_t version = kModelVersion;
  const std::uint64_t len = header.size();
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(header.data(), static_cast<std::streamsize>(len));
  out.write(reinterpret_cast<const char*>(m.w.data()), static_cast<std::streamsize>(m.w.size() * sizeof(double)));
  out.write(reinterpret_cast<const char*>(&m.b), sizeof m.b);
  out.write(reinterpret_cast<const char*>(m.tfidf.idf.data()),
            static_cast<std::streamsize>(m.tfidf.idf.size() * sizeof(double)));
  require(static_cast<bool>(out), "model", "failed writing " + path.string());
}

inline ClassifierModel load_model(const std::filesystem::path& path) {
  auto in = open_input(path, true);
  char magic[8];
  in.read(magic, 8);
  require(in && std::memcmp(magic, kModelMagic, 8) == 0, "model", "not a model file: " + path.string());
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  require(in && version == kModelVersion, "model", "unsupported model version");
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  const auto h = nlohmann::json::parse(header);
  ClassifierModel m;
  m.method = h.at("method").get<std::string>();
  m.p = h.at("p").get<int>();
  m.C = h.at("C").get<double>();
  m.metadata = h.at("metadata");
  auto terms = h.at("terms").get<std::vector<std::string>>();
  auto freqs = h.at("frequencies").get<std::vector<std::uint64_t>>();
  m.vocab = std::make_shared<const Vocabulary>(terms, freqs);
  require(m.vocab->terms() == terms, "model", "stored vocabulary order is inconsistent");
  const std::size_t n = terms.size();
  m.w.resize(n);
  in.read(reinterpret_cast<char*>(m.w.data()), static_cast<std::streamsize>(n * sizeof(double)));
  in.read(reinterpret_cast<char*>(&m.b), sizeof m.b);
  m.tfidf.vocab = m.vocab;
  m.tfidf.n_docs = h.at("n_docs").get<std::size_t>();
  m.tfidf.formula = h.at("idf_formula").get<std::string>();
  m.tfidf.idf.resize(n);
  in.read(reinterpret_cast<char*>(m.tfidf.idf.data()), static_cast<std::streamsize>(n * sizeof(double)));
  require(static_cast<bool>(in), "model", "truncated model file: " + path.string());
  return m;
}

}  // namespace semstab
