#include "competence/synthetic.hpp"

#include <Eigen/QR>

#include "competence/error.hpp"
#include "competence/rng.hpp"
#include "competence/tensor_io.hpp"

namespace competence {

void validate(const SyntheticConfig& c) {
  auto bad = [](const std::string& why) { fail(ErrorCode::InvalidConfig, why); };
  if (c.num_classes < 2) bad("num_classes must be at least 2");
  if (c.feature_dim < 2) bad("feature_dim must be at least 2");
  if (c.num_classes > 2 * c.feature_dim) bad("num_classes may not exceed 2 * feature_dim");
  if (!(c.sigma > 0.0)) bad("sigma must be positive");
  if (!(c.delta >= 0.0)) bad("delta must be non-negative");
  if (!(c.radius >= 0.0)) bad("radius must be non-negative");
  if (c.open_radius < 0.0) bad("open_radius must be non-negative");
  if (c.n_train < 2 * c.num_classes) bad("n_train must give every class at least 2 samples");
  if (c.n_val < 1 || c.n_test < 1 || c.n_ood < 1) bad("every split needs at least one sample");
  if (c.n_open < 0 || c.open_classes < 0) bad("open-world sizes must be non-negative");
  if (c.n_open > 0 && c.open_classes == 0) bad("an open-world split needs open_classes >= 1");
}

LabelVector linear_head_predict(const ClassifierHead& head, const Tensor2& features) {
  if (features.cols() != head.weight.rows()) {
    fail(ErrorCode::DimensionMismatch, "features have " + std::to_string(features.cols()) +
                                           " columns, head expects " + std::to_string(head.weight.rows()));
  }
  const Eigen::MatrixXd logits =
      (features.cast<double>() * head.weight.cast<double>()).rowwise() +
      head.bias.cast<double>().transpose();
  return argmax_rows(logits);
}

ClassifierHead fit_least_squares_head(const Tensor2& features, const LabelVector& labels,
                                      std::int32_t num_classes) {
  const auto n = features.rows();
  const auto d = features.cols();
  Eigen::MatrixXd design(n, d + 1);
  design.leftCols(d) = features.cast<double>();
  design.col(d).setOnes();
  Eigen::MatrixXd targets = Eigen::MatrixXd::Zero(n, num_classes);
  for (Eigen::Index i = 0; i < n; ++i) targets(i, labels(i)) = 1.0;
  const Eigen::MatrixXd beta = design.colPivHouseholderQr().solve(targets);
  ClassifierHead head;
  head.weight = beta.topRows(d).cast<float>();
  head.bias = beta.row(d).transpose().cast<float>();
  return head;
}

namespace {

Tensor2 sample_split(const Eigen::MatrixXd& means, const LabelVector& components, double sigma,
                     const Eigen::VectorXd& shift, Rng& rng) {
  const auto d = means.cols();
  Tensor2 out(components.size(), d);
  for (Eigen::Index i = 0; i < components.size(); ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      out(i, j) = static_cast<float>(means(components(i), j) + shift(j) + sigma * rng.normal());
    }
  }
  return out;
}

LabelVector balanced_labels(Eigen::Index n, std::int32_t classes) {
  LabelVector y(n);
  for (Eigen::Index i = 0; i < n; ++i) y(i) = static_cast<std::int32_t>(i % classes);
  return y;
}

void attach_head_outputs(LabeledSplit& s, const ClassifierHead& head) {
  const Eigen::MatrixXd logits =
      (s.features.cast<double>() * head.weight.cast<double>()).rowwise() +
      head.bias.cast<double>().transpose();
  s.logits = logits.cast<float>();
  s.predictions = argmax_rows(s.logits);
}

}  // namespace

TaskBundle generate_synthetic_task(const SyntheticConfig& c) {
  validate(c);
  const auto d = c.feature_dim;
  Rng rng(c.seed);

  Eigen::MatrixXd gaussian(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) gaussian(i, j) = rng.normal();
  }
  const Eigen::MatrixXd frame = gaussian.householderQr().householderQ();

  Eigen::MatrixXd class_means(c.num_classes, d);
  for (std::int32_t k = 0; k < c.num_classes; ++k) {
    class_means.row(k) = (k < d ? 1.0 : -1.0) * c.radius * frame.col(k % d).transpose();
  }

  Eigen::VectorXd direction(d);
  for (Eigen::Index j = 0; j < d; ++j) direction(j) = rng.normal();
  direction.normalize();

  // Open-world means use frame directions not taken by any class: orthogonal
  // or antipodal to every class mean, so each lies >= open_radius away.
  Eigen::MatrixXd open_means;
  if (c.open_classes > 0) {
    std::vector<Eigen::VectorXd> free;
    for (Eigen::Index i = c.num_classes; i < d; ++i) free.push_back(frame.col(i));
    for (Eigen::Index i = std::max<Eigen::Index>(0, c.num_classes - d); i < d; ++i) {
      free.push_back(-frame.col(i));
    }
    const double r_open = c.open_radius > 0.0 ? c.open_radius : c.radius + 10.0 * c.sigma;
    open_means.resize(c.open_classes, d);
    for (std::int32_t j = 0; j < c.open_classes; ++j) {
      open_means.row(j) = r_open * free[static_cast<std::size_t>(j) % free.size()].transpose();
    }
  }

  const Eigen::VectorXd no_shift = Eigen::VectorXd::Zero(d);
  TaskBundle b;
  b.num_classes = c.num_classes;
  auto make = [&](Eigen::Index n, const Eigen::VectorXd& shift) {
    LabeledSplit s;
    s.labels = balanced_labels(n, c.num_classes);
    s.features = sample_split(class_means, s.labels, c.sigma, shift, rng);
    return s;
  };
  b.id_train = make(c.n_train, no_shift);
  b.id_val = make(c.n_val, no_shift);
  b.id_test = make(c.n_test, no_shift);
  b.ood_test = make(c.n_ood, c.delta * direction);
  if (c.n_open > 0) {
    LabeledSplit open;
    const LabelVector component = balanced_labels(c.n_open, c.open_classes);
    open.features = sample_split(open_means, component, c.sigma, no_shift, rng);
    open.labels = LabelVector::Constant(c.n_open, kUnknownClass);
    b.open_world = std::move(open);
  }

  b.head = fit_least_squares_head(b.id_train.features, b.id_train.labels, c.num_classes);
  for (LabeledSplit* s : {&b.id_train, &b.id_val, &b.id_test, &b.ood_test}) attach_head_outputs(*s, b.head);
  if (b.open_world) attach_head_outputs(*b.open_world, b.head);

  b.meta = {{"dataset", "synthetic"},
            {"test_domain", "shift_" + std::to_string(c.delta)},
            {"seed", std::to_string(c.seed)}};
  validate_bundle(b);
  return b;
}

}  // namespace competence
