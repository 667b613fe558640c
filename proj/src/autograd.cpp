#include "mvstr/autograd.hpp"

#include <atomic>

namespace mvstr {

namespace {

thread_local Tape* g_active_tape = nullptr;
thread_local bool g_grad_enabled = true;
std::atomic<std::uint64_t> g_tape_serial{1};

Tensor accumulate(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.precision() != b.precision()) {
    throw DimensionError("gradient accumulation mismatch: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  return dispatch(a.precision(), [&]<class T>() {
    auto x = a.data<T>();
    auto y = b.data<T>();
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
    return Tensor::from_buffer<T>(a.shape(), std::move(out));
  });
}

}  // namespace

Tape::Tape() : serial_(g_tape_serial.fetch_add(1)) {}

Tape* Tape::active() { return g_active_tape; }

bool grad_enabled() { return g_grad_enabled; }

std::int64_t Tape::node_of(const Tensor& t) {
  if (!t.defined()) return -1;
  auto* impl = t.impl();
  if (impl->tape_ref.tape_serial == serial_ && impl->tape_ref.node >= 0) {
    return impl->tape_ref.node;
  }
  if (!impl->requires_grad) return -1;
  Node leaf;
  leaf.leaf = t;
  leaf.shape = t.shape();
  leaf.precision = t.precision();
  nodes_.push_back(std::move(leaf));
  impl->tape_ref = {serial_, static_cast<std::int64_t>(nodes_.size() - 1)};
  return impl->tape_ref.node;
}

void Tape::record(Tensor& output, const std::vector<Tensor>& inputs, BackwardFn fn) {
  // A consumed tape only accepts reset(); later ops run untracked.
  if (consumed_) return;
  Node node;
  node.parents.reserve(inputs.size());
  bool any = false;
  for (const auto& in : inputs) {
    if (in.defined() && in.precision() != output.precision()) {
      throw UsageError("mixed precisions in one graph");
    }
    const auto id = node_of(in);
    any = any || id >= 0;
    node.parents.push_back(id);
  }
  if (!any) return;
  node.backward = std::move(fn);
  node.shape = output.shape();
  node.precision = output.precision();
  nodes_.push_back(std::move(node));
  output.impl()->requires_grad = true;
  output.impl()->tape_ref = {serial_, static_cast<std::int64_t>(nodes_.size() - 1)};
}

Gradients Tape::backward(const Tensor& loss) {
  if (consumed_) throw UsageError("backward called twice on the same tape without reset()");
  if (!loss.defined() || loss.numel() != 1) {
    throw UsageError("backward requires a scalar loss, got " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  const auto& ref = loss.impl()->tape_ref;
  if (ref.tape_serial != serial_ || ref.node < 0) {
    throw UsageError("loss was not recorded on this tape");
  }
  consumed_ = true;

  NoGradGuard no_grad;
  Gradients result;
  std::vector<Tensor> grads(nodes_.size());
  grads[static_cast<std::size_t>(ref.node)] = Tensor::ones(loss.shape(), loss.precision());

  for (std::int64_t i = ref.node; i >= 0; --i) {
    auto& node = nodes_[static_cast<std::size_t>(i)];
    Tensor g = std::move(grads[static_cast<std::size_t>(i)]);
    if (!g.defined()) continue;
    if (!node.backward) {
      result.grads_[node.leaf.impl()] = g;
      result.keep_alive_.push_back(node.leaf);
      continue;
    }
    auto parent_grads = node.backward(g);
    if (parent_grads.size() != node.parents.size()) {
      throw UsageError("backward closure returned wrong number of gradients");
    }
    for (std::size_t k = 0; k < node.parents.size(); ++k) {
      const auto p = node.parents[k];
      if (p < 0 || !parent_grads[k].defined()) continue;
      auto& slot = grads[static_cast<std::size_t>(p)];
      const auto& expect = nodes_[static_cast<std::size_t>(p)].shape;
      if (parent_grads[k].shape() != expect) {
        throw DimensionError("gradient shape " + shape_str(parent_grads[k].shape()) +
                             " does not match input shape " + shape_str(expect));
      }
      slot = slot.defined() ? accumulate(slot, parent_grads[k]) : std::move(parent_grads[k]);
    }
  }
  return result;
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
  serial_ = g_tape_serial.fetch_add(1);
}

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool Gradients::has(const Tensor& t) const { return grads_.count(t.impl()) > 0; }

Tensor Gradients::get(const Tensor& t) const {
  auto it = grads_.find(t.impl());
  if (it == grads_.end()) return Tensor::zeros(t.shape(), t.precision());
  return it->second;
}

Tensor& record_op(Tensor& output, const std::vector<Tensor>& inputs, Tape::BackwardFn fn) {
  Tape* tape = Tape::active();
  if (!tape || !g_grad_enabled) return output;
  bool any = false;
  for (const auto& in : inputs) any = any || (in.defined() && in.requires_grad());
  if (!any) return output;
  tape->record(output, inputs, std::move(fn));
  return output;
}

}  // namespace mvstr
