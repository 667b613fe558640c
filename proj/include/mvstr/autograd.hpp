#pragma once

#include <cstdint>
#include <functional>
#include <unordered_map>
#include <vector>

#include "mvstr/tensor.hpp"

namespace mvstr {

class Gradients;

// Reverse-mode tape. Operations executed while a tape is active (see
// TapeScope) and touching a requires_grad tensor append a node holding the
// backward closure and its saved activations. Nodes are appended in
// execution order, so parents always precede children.
class Tape {
 public:
  // Maps the output gradient to one gradient per input (undefined when the
  // input does not need one).
  using BackwardFn = std::function<std::vector<Tensor>(const Tensor& grad_out)>;

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return nodes_.size(); }
  std::uint64_t serial() const { return serial_; }

  // Accumulates dLoss/dLeaf for every requires_grad leaf reached from loss.
  // A second call before reset() is a usage error.
  Gradients backward(const Tensor& loss);
  void reset();

  // Used by operation implementations.
  std::int64_t node_of(const Tensor& t);
  void record(Tensor& output, const std::vector<Tensor>& inputs, BackwardFn fn);

  static Tape* active();

 private:
  friend class TapeScope;
  struct Node {
    std::vector<std::int64_t> parents;  // -1 for untracked inputs
    BackwardFn backward;                // empty for leaves
    Tensor leaf;                        // set for leaves only
    Shape shape;
    Precision precision = Precision::standard;
  };
  std::vector<Node> nodes_;
  std::uint64_t serial_;
  bool consumed_ = false;
};

// Makes a tape active on this thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

// Suspends recording; backward closures run under it.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

class Gradients {
 public:
  bool has(const Tensor& t) const;
  // Zero tensor of matching shape when t received no gradient.
  Tensor get(const Tensor& t) const;
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Tape;
  std::unordered_map<const TensorImpl*, Tensor> grads_;
  std::vector<Tensor> keep_alive_;
};

// Records `output` as produced from `inputs` if any input is tracked on the
// active tape. Returns output for chaining.
Tensor& record_op(Tensor& output, const std::vector<Tensor>& inputs,
                  Tape::BackwardFn fn);

}  // namespace mvstr
