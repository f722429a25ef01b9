#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "t2t/rng.hpp"
#include "t2t/tensor.hpp"

namespace t2t {

struct AdamState {
    Tensor m;  // first moment
    Tensor v;  // second moment
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

// Named, shaped parameter tensors with gradient accumulators and Adam state.
// Entries are kept in a sorted map so serialization order is deterministic.
class ParameterStore {
public:
    Tensor& create(const std::string& name, std::vector<std::size_t> shape);
    Tensor& create(const std::string& name, Tensor init);

    bool has(const std::string& name) const { return entries_.count(name) != 0; }
    std::size_t count() const { return entries_.size(); }
    std::size_t scalar_count() const;

    Tensor& value(const std::string& name);
    const Tensor& value(const std::string& name) const;
    Tensor& grad(const std::string& name);
    const Tensor& grad(const std::string& name) const;

    std::vector<std::string> names() const;

    void zero_grads();

    // One Adam update with bias correction over every entry; gradients are
    // zeroed afterwards. Throws if any gradient is non-finite.
    void adam_step(double lr, double beta1 = kAdamBeta1, double beta2 = kAdamBeta2,
                   double eps = kAdamEps);

    std::int64_t steps() const { return step_; }

    // Convenience: N(0, stddev) fill of an entry from the given stream.
    void gaussian_init(const std::string& name, Rng rng, double stddev = 1.0);

    // Checkpoint document ({"format":"t2t-ckpt-v1",...}); numbers are written
    // with 17 significant digits so save -> load -> save is byte-identical.
    std::string to_json() const;
    static ParameterStore from_json(const std::string& text);
    void save(const std::string& path) const;
    static ParameterStore load(const std::string& path);

private:
    struct Entry {
        Tensor value;
        Tensor grad;
        AdamState adam;
    };
    friend class Tape;

    Entry& entry(const std::string& name);
    const Entry& entry(const std::string& name) const;

    std::map<std::string, Entry> entries_;
    std::int64_t step_ = 0;
};

// %.17g rendering used across all numeric file formats that must round-trip.
std::string format_double(double v);

}  // namespace t2t
