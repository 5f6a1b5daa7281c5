#pragma once

#include <string>
#include <utility>
#include <vector>

#include "gwf/tensor.hpp"

namespace gwf {

/// Ordered, named collection of trainable tensors with gradient slots.
class ParamStore {
public:
    /// Registers a parameter; the tensor must require grad. Names are unique.
    Tensor& add(const std::string& name, Tensor t);
    Tensor* find(const std::string& name);
    const Tensor* find(const std::string& name) const;

    std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
    const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }

    std::size_t tensor_count() const { return items_.size(); }
    std::int64_t scalar_count() const;
    void zero_grad();
    bool grads_finite(std::string* offender = nullptr) const;

private:
    std::vector<std::pair<std::string, Tensor>> items_;
};

// Binary parameter checkpoint, little-endian:
//   magic "GWF1" | u8 precision (32 or 64) | u32 tensor count
//   per tensor: u32 name length | name bytes | u32 rank | u64 extents | raw data
// Raw data is float32 or float64 per the precision field.
void save_checkpoint(const ParamStore& store, const std::string& path,
                     int precision_bits = 64);

/// Loads values into an already-constructed store; names and shapes must match.
void load_checkpoint(ParamStore& store, const std::string& path);

}  // namespace gwf
