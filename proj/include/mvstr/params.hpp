#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mvstr/tensor.hpp"

namespace mvstr {

// Ordered, named collection of trainable tensors. Module parameter structs
// hold handles that alias the tensors stored here, so optimizer updates
// are visible to every module.
class ParamStore {
 public:
  explicit ParamStore(Precision precision = Precision::standard) : precision_(precision) {}

  Precision precision() const { return precision_; }

  // Registers a parameter; name must be unique.
  Tensor add(const std::string& name, Tensor value);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::int64_t total_elements() const;

  // Copies values of matching names; shapes must agree. Returns count copied.
  std::size_t assign_from(const std::vector<std::pair<std::string, Tensor>>& values,
                          bool require_all = true);

 private:
  Precision precision_;
  std::vector<std::pair<std::string, Tensor>> items_;
};

// Uniform(-sqrt(6 / fan_in), +sqrt(6 / fan_in)).
Tensor he_uniform(const Shape& shape, std::int64_t fan_in, std::mt19937_64& rng, Precision p);
Tensor uniform(const Shape& shape, double lo, double hi, std::mt19937_64& rng, Precision p);

}  // namespace mvstr
