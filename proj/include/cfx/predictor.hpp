#pragma once

// Black-box classifier contract: only predictions are observable.

#include <atomic>
#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "cfx/schema.hpp"

namespace cfx {

class Predictor {
 public:
  virtual ~Predictor() = default;

  virtual std::vector<int> predict_batch(std::span<const Instance> batch) const = 0;

  virtual int predict(const Instance& z) const { return predict_batch(std::span<const Instance>(&z, 1)).front(); }
};

class ConstantPredictor final : public Predictor {
 public:
  explicit ConstantPredictor(int label) : label_(label) {}
  std::vector<int> predict_batch(std::span<const Instance> batch) const override {
    return std::vector<int>(batch.size(), label_);
  }
  int predict(const Instance&) const override { return label_; }

 private:
  int label_;
};

// Adapts any callable `int(const Instance&)`; the callable must be pure.
class FunctionPredictor final : public Predictor {
 public:
  explicit FunctionPredictor(std::function<int(const Instance&)> fn) : fn_(std::move(fn)) {}
  std::vector<int> predict_batch(std::span<const Instance> batch) const override {
    std::vector<int> out;
    out.reserve(batch.size());
    for (const auto& z : batch) out.push_back(fn_(z));
    return out;
  }
  int predict(const Instance& z) const override { return fn_(z); }

 private:
  std::function<int(const Instance&)> fn_;
};

// Counts model queries (instances classified) of a wrapped predictor.
class CountingPredictor final : public Predictor {
 public:
  explicit CountingPredictor(const Predictor& inner) : inner_(inner) {}
  std::vector<int> predict_batch(std::span<const Instance> batch) const override {
    queries_ += batch.size();
    return inner_.predict_batch(batch);
  }
  int predict(const Instance& z) const override {
    ++queries_;
    return inner_.predict(z);
  }
  std::size_t queries() const { return queries_.load(); }

 private:
  const Predictor& inner_;
  mutable std::atomic<std::size_t> queries_{0};
};

}  // namespace cfx
