#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "irene/nn/tensor.hpp"

namespace irene::nn {

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double epsilon = 1e-8;

  void validate() const {
    if (!(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1)) throw Error("Adam betas must lie in (0, 1)");
    if (!(epsilon > 0)) throw Error("Adam epsilon must be positive");
    if (!(lr > 0)) throw Error("learning rate must be positive");
  }
};

/// Named trainable tensors with their Adam moments. Insertion order is preserved and defines the
/// checkpoint layout.
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
    Mat m;
    Mat v;
  };

  Tensor add(const std::string& name, Mat init) {
    if (index_.count(name)) throw Error("duplicate parameter name \"" + name + "\"");
    Entry e{name, Tensor::parameter(std::move(init)), {}, {}};
    e.m = Mat::Zero(e.tensor.rows(), e.tensor.cols());
    e.v = Mat::Zero(e.tensor.rows(), e.tensor.cols());
    index_[name] = entries_.size();
    entries_.push_back(std::move(e));
    return entries_.back().tensor;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& get(const std::string& name) const { return at(name).tensor; }
  Entry& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter \"" + name + "\"");
    return entries_[it->second];
  }
  const Entry& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter \"" + name + "\"");
    return entries_[it->second];
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t num_scalars() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += static_cast<std::size_t>(e.tensor.value().size());
    return n;
  }

  std::int64_t step() const { return step_; }
  void set_step(std::int64_t s) { step_ = s; }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

  /// Copies values (not moments) from another store with identical names and shapes.
  void copy_values_from(const ParameterStore& other) {
    for (auto& e : entries_) {
      const auto& src = other.at(e.name).tensor.value();
      if (src.rows() != e.tensor.rows() || src.cols() != e.tensor.cols())
        throw ShapeMismatch("parameter \"" + e.name + "\" has a different shape");
      e.tensor.mutable_value() = src;
    }
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::int64_t step_ = 0;
};

/// One bias-corrected Adam update over every parameter, then clears gradients. Parameters that
/// received no gradient this step are updated as if their gradient were zero.
inline void adam_step(ParameterStore& store, const AdamConfig& cfg) {
  cfg.validate();
  bool any = false;
  for (const auto& e : store.entries()) any = any || e.tensor.has_grad();
  if (!any) throw MissingGrad("adam_step called without any parameter gradient");
  store.set_step(store.step() + 1);
  const double t = static_cast<double>(store.step());
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& e : store.entries()) {
    if (e.tensor.has_grad()) {
      const Mat& g = e.tensor.grad();
      check_finite(g, "gradient");
      e.m = cfg.beta1 * e.m + (1.0 - cfg.beta1) * g;
      e.v = cfg.beta2 * e.v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    } else {
      e.m *= cfg.beta1;
      e.v *= cfg.beta2;
    }
    Mat& p = e.tensor.mutable_value();
    p.array() -= cfg.lr * (e.m.array() / c1) / ((e.v.array() / c2).sqrt() + cfg.epsilon);
    e.tensor.zero_grad();
  }
}

/// Initializers drawing from a caller-owned generator.
struct Init {
  std::mt19937_64& rng;

  Mat uniform(Index rows, Index cols, double bound) {
    std::uniform_real_distribution<double> d(-bound, bound);
    Mat m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
    return m;
  }
  Mat normal(Index rows, Index cols, double stddev) {
    std::normal_distribution<double> d(0.0, stddev);
    Mat m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
    return m;
  }
};

}  // namespace irene::nn
