#pragma once

#include <vector>

#include "gwf/tensor.hpp"

namespace gwf {

enum class BoundaryMode { Symmetric, Periodic };

/// Daubechies filter pair. Analysis runs in correlation form, so the
/// decomposition and reconstruction filters coincide for these orthogonal
/// families; the high-pass is the alternating-sign reversal of the low-pass.
struct WaveletFilter {
    int order = 0;  // N in dbN
    std::vector<double> dec_lo, dec_hi;
    std::vector<double> rec_lo, rec_hi;
    int length() const { return static_cast<int>(dec_lo.size()); }
};

/// Hard-coded db1..db10 coefficients.
WaveletFilter filter_bank(int order);

/// Precomputed separable dyadic decomposition for one spatial shape
/// (1 to 3 dims), a filter and a level count. Coefficient layout:
/// detail subbands level 1..L (mask order, bit a set = axis a high-pass),
/// then the level-L approximation. Every subband of level l shares the
/// per-axis coefficient lengths of that level.
class DwtPlan {
public:
    struct Block {
        int level;          // 1-based; approximation carries level L
        unsigned mask;      // 0 for the approximation block
        std::vector<int> shape;
        int offset;         // into the flat coefficient vector
        int size;
    };

    DwtPlan(std::vector<int> spatial_shape, const WaveletFilter& filter, int levels,
            BoundaryMode mode);

    int input_size() const { return input_size_; }
    int coeff_size() const { return coeff_size_; }
    int levels() const { return static_cast<int>(levels_.size()); }
    const std::vector<int>& spatial_shape() const { return spatial_shape_; }
    const std::vector<Block>& blocks() const { return blocks_; }
    const Block& block(int level, unsigned mask) const;
    BoundaryMode mode() const { return mode_; }
    const WaveletFilter& filter() const { return filter_; }

    void forward(const double* field, double* coeffs) const;
    void inverse(const double* coeffs, double* field) const;
    // Exact transposes of the two linear maps (gradient propagation).
    void forward_adjoint(const double* coeff_grad, double* field_grad) const;
    void inverse_adjoint(const double* field_grad, double* coeff_grad) const;

private:
    struct Level {
        std::vector<int> in_shape;
        std::vector<int> nc;  // per-axis coefficient length
    };
    void analyze_level(const Level& lv, const std::vector<double>& in,
                       std::vector<double>& out) const;
    void synthesize_level(const Level& lv, const std::vector<double>& in,
                          std::vector<double>& out) const;
    void analyze_level_adjoint(const Level& lv, const std::vector<double>& gout,
                               std::vector<double>& gin) const;
    void synthesize_level_adjoint(const Level& lv, const std::vector<double>& gin,
                                  std::vector<double>& gout) const;

    std::vector<int> spatial_shape_;
    WaveletFilter filter_;
    BoundaryMode mode_;
    std::vector<Level> levels_;
    std::vector<Block> blocks_;
    int input_size_ = 0;
    int coeff_size_ = 0;
};

/// Standalone coefficient container mirroring the plan layout.
struct WaveletCoeffs {
    std::vector<int> original_shape;
    int levels = 0;
    int family_order = 0;
    BoundaryMode mode = BoundaryMode::Symmetric;
    std::vector<double> flat;
    std::vector<DwtPlan::Block> blocks;

    std::vector<double> block_values(int level, unsigned mask) const;
};

WaveletCoeffs dwt_forward(const std::vector<double>& field,
                          const std::vector<int>& shape, const WaveletFilter& filter,
                          int levels, BoundaryMode mode = BoundaryMode::Symmetric);
std::vector<double> dwt_inverse(const WaveletCoeffs& coeffs, const WaveletFilter& filter);

// Autodiff wrappers: fields are (channels, spatial...) tensors, coefficient
// tensors are (channels, coeff_size). Backward applies the exact adjoint.
Tensor dwt_op(const Tensor& field, const DwtPlan& plan);
Tensor idwt_op(const Tensor& coeffs, const DwtPlan& plan);

}  // namespace gwf
