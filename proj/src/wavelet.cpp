#include "gwf/wavelet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace gwf {

namespace {

// Daubechies scaling coefficients, minimal-phase spectral factorization.
const std::vector<std::vector<double>> kDaubechies = {
    // db1
    {0.7071067811865475244008444, 0.7071067811865475244008444},
    // db2
    {0.4829629131445341433748716, 0.8365163037378079055752938,
     0.2241438680420133810259728, -0.1294095225512603811744494},
    // db3
    {0.3326705529500826159985116, 0.8068915093110925764944936,
     0.4598775021184915700951519, -0.1350110200102545886963899,
     -0.08544127388202666169281917, 0.03522629188570953660274066},
    // db4
    {0.2303778133088965008632912, 0.714846570552915647089922,
     0.6308807679298589078817163, -0.02798376941685985421141375,
     -0.1870348117190930840795707, 0.03084138183556076362721936,
     0.03288301166688519973540751, -0.01059740178506903210488321},
    // db5
    {0.1601023979741929144807237, 0.6038292697971896705401193,
     0.7243085284377729277280712, 0.1384281459013207315053971,
     -0.2422948870663820318625714, -0.03224486958463837464847976,
     0.07757149384004571352313049, -0.006241490212798274274190519,
     -0.01258075199908199946850974, 0.003335725285473771277998183},
    // db6
    {0.1115407433501094636213239, 0.4946238903984530856772042,
     0.7511339080210953506789345, 0.3152503517091976290859897,
     -0.2262646939654398200763145, -0.1297668675672619355622896,
     0.09750160558732304910234355, 0.02752286553030572862554084,
     -0.03158203931748602956507908, 0.0005538422011614961392519184,
     0.004777257510945510639635975, -0.001077301085308479564852622},
    // db7
    {0.07785205408500917901996352, 0.3965393194819173065390004,
     0.7291320908462351199169431, 0.4697822874051931224715912,
     -0.1439060039285649754050684, -0.2240361849938749826381404,
     0.07130921926683026475087657, 0.08061260915108307191292248,
     -0.03802993693501441357959206, -0.01657454163066688065410767,
     0.01255099855609984061298989, 0.0004295779729213665211321291,
     -0.001801640704047490915268263, 0.0003537137999745202484462958},
    // db8
    {0.05441584224310400995500941, 0.3128715909142999706591624,
     0.6756307362972898068078008, 0.5853546836542067127712655,
     -0.01582910525634930566738055, -0.2840155429615469265162031,
     0.00047248457391328277036059, 0.1287474266204784588570293,
     -0.01736930100180754616961615, -0.04408825393079475150676372,
     0.01398102791739828164872293, 0.008746094047405776716382743,
     -0.004870352993451574310422182, -0.0003917403733769470462980804,
     0.0006754494064505693663695476, -0.0001174767841247695337306282},
    // db9
    {0.03807794736387834658869766, 0.2438346746125903537320416,
     0.6048231236901111119030769, 0.6572880780513005380782126,
     0.1331973858250075761909549, -0.2932737832791749088064032,
     -0.09684078322297646051350813, 0.1485407493381063801350727,
     0.0307256814793333792123174, -0.06763282906132997367564227,
     0.0002509471148314519575871897, 0.02236166212367909720537378,
     -0.004723204757751397277925708, -0.004281503682463429834496795,
     0.001847646883056226476619129, 0.0002303857635231959672052164,
     -0.0002519631889427101369749887, 0.00003934732031627159948068988},
    // db10
    {0.02667005790055555358661745, 0.188176800077691489020893,
     0.5272011889317255864817448, 0.6884590394536035657418718,
     0.281172343660577460748727, -0.2498464243273153794161019,
     -0.1959462743773770435042993, 0.1273693403357932600826772,
     0.09305736460357235116035229, -0.07139414716639708714533609,
     -0.02945753682187581285828324, 0.03321267405934100173976365,
     0.003606553566956169655423291, -0.01073317548333057504431811,
     0.001395351747052901165789318, 0.001992405295185056117158742,
     -0.000685856694959711626561371, -0.000116466855129285450951481,
     0.00009358867032006959133405013, -0.00001326420289452124481243668},
};

// Half-sample symmetric extension index: ... x1 x0 | x0 .. xn-1 | xn-1 xn-2 ...
int sym_index(int j, int n) {
    const int period = 2 * n;
    int p = j % period;
    if (p < 0) p += period;
    return p < n ? p : period - 1 - p;
}

int mod_index(int j, int n) {
    int p = j % n;
    return p < 0 ? p + n : p;
}

}  // namespace

WaveletFilter filter_bank(int order) {
    if (order < 1 || order > static_cast<int>(kDaubechies.size()))
        throw ShapeError("filter_bank: unsupported Daubechies order db" +
                         std::to_string(order) + " (supported: db1..db10)");
    const auto& h = kDaubechies[static_cast<size_t>(order - 1)];
    const int F = static_cast<int>(h.size());
    WaveletFilter f;
    f.order = order;
    f.dec_lo = h;
    f.dec_hi.resize(static_cast<size_t>(F));
    for (int i = 0; i < F; ++i)
        f.dec_hi[static_cast<size_t>(i)] =
            (i % 2 == 0 ? 1.0 : -1.0) * h[static_cast<size_t>(F - 1 - i)];
    f.rec_lo = f.dec_lo;
    f.rec_hi = f.dec_hi;
    return f;
}

// ---------------------------------------------------------------------------
// 1-D kernels. Analysis window i covers input positions 2i+s .. 2i+s+F-1
// with phase s = 2-F, so even-length signals pair up with no offset (Haar
// windows are exactly (x0,x1),(x2,x3),...). Symmetric mode yields
// nc = floor((n+F-1)/2) coefficients per band; periodic mode needs even n
// and yields n/2. Synthesis is the exact inverse in both modes.
// ---------------------------------------------------------------------------

namespace {

struct Line {
    const WaveletFilter* f;
    BoundaryMode mode;

    int ncoeff(int n) const {
        const int F = f->length();
        return mode == BoundaryMode::Periodic ? n / 2 : (n + F - 1) / 2;
    }

    void analyze(const double* x, int n, double* ca, double* cd) const {
        const int F = f->length();
        const int s = 2 - F;
        const int nc = ncoeff(n);
        for (int i = 0; i < nc; ++i) {
            double lo = 0.0, hi = 0.0;
            for (int k = 0; k < F; ++k) {
                const int j = 2 * i + k + s;
                const double v = x[mode == BoundaryMode::Periodic ? mod_index(j, n)
                                                                  : sym_index(j, n)];
                lo += f->dec_lo[static_cast<size_t>(k)] * v;
                hi += f->dec_hi[static_cast<size_t>(k)] * v;
            }
            ca[i] = lo;
            cd[i] = hi;
        }
    }

    void synthesize(const double* ca, const double* cd, int n, double* x) const {
        const int F = f->length();
        const int s = 2 - F;
        const int nc = ncoeff(n);
        std::fill(x, x + n, 0.0);
        if (mode == BoundaryMode::Periodic) {
            for (int i = 0; i < nc; ++i)
                for (int k = 0; k < F; ++k) {
                    const int t = mod_index(2 * i + k + s, n);
                    x[t] += ca[i] * f->rec_lo[static_cast<size_t>(k)] +
                            cd[i] * f->rec_hi[static_cast<size_t>(k)];
                }
        } else {
            for (int i = 0; i < nc; ++i)
                for (int k = 0; k < F; ++k) {
                    const int t = 2 * i + k + s;
                    if (t < 0 || t >= n) continue;
                    x[t] += ca[i] * f->rec_lo[static_cast<size_t>(k)] +
                            cd[i] * f->rec_hi[static_cast<size_t>(k)];
                }
        }
    }

    // gx += A^T (gca, gcd)
    void analyze_adjoint(const double* gca, const double* gcd, int n, double* gx) const {
        const int F = f->length();
        const int s = 2 - F;
        const int nc = ncoeff(n);
        for (int i = 0; i < nc; ++i)
            for (int k = 0; k < F; ++k) {
                const int j = 2 * i + k + s;
                const int t = mode == BoundaryMode::Periodic ? mod_index(j, n)
                                                             : sym_index(j, n);
                gx[t] += gca[i] * f->dec_lo[static_cast<size_t>(k)] +
                         gcd[i] * f->dec_hi[static_cast<size_t>(k)];
            }
    }

    // (gca, gcd) += S^T gx
    void synthesize_adjoint(const double* gx, int n, double* gca, double* gcd) const {
        const int F = f->length();
        const int s = 2 - F;
        const int nc = ncoeff(n);
        for (int i = 0; i < nc; ++i) {
            double lo = 0.0, hi = 0.0;
            for (int k = 0; k < F; ++k) {
                const int j = 2 * i + k + s;
                if (mode == BoundaryMode::Periodic) {
                    const double g = gx[mod_index(j, n)];
                    lo += f->rec_lo[static_cast<size_t>(k)] * g;
                    hi += f->rec_hi[static_cast<size_t>(k)] * g;
                } else {
                    if (j < 0 || j >= n) continue;
                    lo += f->rec_lo[static_cast<size_t>(k)] * gx[j];
                    hi += f->rec_hi[static_cast<size_t>(k)] * gx[j];
                }
            }
            gca[i] += lo;
            gcd[i] += hi;
        }
    }
};

int prod(const std::vector<int>& v) {
    int p = 1;
    for (int e : v) p *= e;
    return p;
}

// Applies op(line_in, n, line_out) along `axis` of an array with shape
// `shape`; out gets shape with shape[axis] replaced by out_len.
template <typename OpFn>
void apply_along_axis(const std::vector<double>& in, const std::vector<int>& shape,
                      int axis, int out_len, std::vector<double>& out, OpFn&& op) {
    const int n = shape[static_cast<size_t>(axis)];
    int outer = 1, inner = 1;
    for (int a = 0; a < axis; ++a) outer *= shape[static_cast<size_t>(a)];
    for (size_t a = static_cast<size_t>(axis) + 1; a < shape.size(); ++a)
        inner *= shape[a];
    out.assign(static_cast<size_t>(outer) * out_len * inner, 0.0);
    std::vector<double> line_in(static_cast<size_t>(n));
    std::vector<double> line_out(static_cast<size_t>(out_len));
    for (int o = 0; o < outer; ++o)
        for (int i = 0; i < inner; ++i) {
            for (int j = 0; j < n; ++j)
                line_in[static_cast<size_t>(j)] =
                    in[(static_cast<size_t>(o) * n + j) * inner + i];
            op(line_in.data(), n, line_out.data());
            for (int j = 0; j < out_len; ++j)
                out[(static_cast<size_t>(o) * out_len + j) * inner + i] =
                    line_out[static_cast<size_t>(j)];
        }
}

}  // namespace

// ---------------------------------------------------------------------------
// DwtPlan
// ---------------------------------------------------------------------------

DwtPlan::DwtPlan(std::vector<int> spatial_shape, const WaveletFilter& filter,
                 int levels, BoundaryMode mode)
    : spatial_shape_(std::move(spatial_shape)), filter_(filter), mode_(mode) {
    if (spatial_shape_.empty() || spatial_shape_.size() > 3)
        throw ShapeError("DwtPlan: 1 to 3 spatial dims supported, got " +
                         std::to_string(spatial_shape_.size()));
    if (levels < 1) throw ShapeError("DwtPlan: levels must be >= 1");
    input_size_ = prod(spatial_shape_);

    const int F = filter_.length();
    Line line{&filter_, mode_};
    std::vector<int> cur = spatial_shape_;
    for (int lv = 1; lv <= levels; ++lv) {
        Level L;
        L.in_shape = cur;
        L.nc.resize(cur.size());
        for (size_t a = 0; a < cur.size(); ++a) {
            const int n = cur[a];
            if (n < F)
                throw ShapeError("DwtPlan: axis " + std::to_string(a) + " length " +
                                 std::to_string(n) + " shorter than filter length " +
                                 std::to_string(F) + " at level " + std::to_string(lv));
            if (mode_ == BoundaryMode::Periodic && n % 2 != 0)
                throw ShapeError("DwtPlan: periodic mode needs even axis length, axis " +
                                 std::to_string(a) + " has " + std::to_string(n) +
                                 " at level " + std::to_string(lv));
            L.nc[a] = line.ncoeff(n);
        }
        levels_.push_back(L);
        cur = L.nc;
    }

    // layout: details level 1..L (mask 1..2^d-1), then the approximation
    int offset = 0;
    const unsigned nmask = 1u << spatial_shape_.size();
    for (int lv = 1; lv <= levels; ++lv) {
        const Level& L = levels_[static_cast<size_t>(lv - 1)];
        for (unsigned mask = 1; mask < nmask; ++mask) {
            Block b;
            b.level = lv;
            b.mask = mask;
            b.shape = L.nc;
            b.offset = offset;
            b.size = prod(L.nc);
            offset += b.size;
            blocks_.push_back(std::move(b));
        }
    }
    Block approx;
    approx.level = levels;
    approx.mask = 0;
    approx.shape = levels_.back().nc;
    approx.offset = offset;
    approx.size = prod(levels_.back().nc);
    offset += approx.size;
    blocks_.push_back(std::move(approx));
    coeff_size_ = offset;
}

const DwtPlan::Block& DwtPlan::block(int level, unsigned mask) const {
    for (const Block& b : blocks_)
        if (b.level == level && b.mask == mask) return b;
    throw ShapeError("DwtPlan: no block for level " + std::to_string(level) +
                     " mask " + std::to_string(mask));
}

void DwtPlan::analyze_level(const Level& lv, const std::vector<double>& in,
                            std::vector<double>& out) const {
    Line line{&filter_, mode_};
    std::vector<double> cur = in;
    std::vector<int> shape = lv.in_shape;
    std::vector<double> next;
    for (size_t a = 0; a < shape.size(); ++a) {
        const int nc = lv.nc[a];
        apply_along_axis(cur, shape, static_cast<int>(a), 2 * nc, next,
                         [&](const double* x, int n, double* y) {
                             line.analyze(x, n, y, y + nc);
                         });
        shape[a] = 2 * nc;
        cur.swap(next);
    }
    out.swap(cur);
}

void DwtPlan::synthesize_level(const Level& lv, const std::vector<double>& in,
                               std::vector<double>& out) const {
    Line line{&filter_, mode_};
    std::vector<double> cur = in;
    std::vector<int> shape(lv.in_shape.size());
    for (size_t a = 0; a < shape.size(); ++a) shape[a] = 2 * lv.nc[a];
    std::vector<double> next;
    for (int a = static_cast<int>(shape.size()) - 1; a >= 0; --a) {
        const int n = lv.in_shape[static_cast<size_t>(a)];
        const int nc = lv.nc[static_cast<size_t>(a)];
        apply_along_axis(cur, shape, a, n, next,
                         [&](const double* y, int, double* x) {
                             line.synthesize(y, y + nc, n, x);
                         });
        shape[static_cast<size_t>(a)] = n;
        cur.swap(next);
    }
    out.swap(cur);
}

void DwtPlan::analyze_level_adjoint(const Level& lv, const std::vector<double>& gout,
                                    std::vector<double>& gin) const {
    Line line{&filter_, mode_};
    std::vector<double> cur = gout;
    std::vector<int> shape(lv.in_shape.size());
    for (size_t a = 0; a < shape.size(); ++a) shape[a] = 2 * lv.nc[a];
    std::vector<double> next;
    for (int a = static_cast<int>(shape.size()) - 1; a >= 0; --a) {
        const int n = lv.in_shape[static_cast<size_t>(a)];
        const int nc = lv.nc[static_cast<size_t>(a)];
        apply_along_axis(cur, shape, a, n, next,
                         [&](const double* gy, int, double* gx) {
                             std::fill(gx, gx + n, 0.0);
                             line.analyze_adjoint(gy, gy + nc, n, gx);
                         });
        shape[static_cast<size_t>(a)] = n;
        cur.swap(next);
    }
    gin.swap(cur);
}

void DwtPlan::synthesize_level_adjoint(const Level& lv, const std::vector<double>& gin,
                                       std::vector<double>& gout) const {
    Line line{&filter_, mode_};
    std::vector<double> cur = gin;
    std::vector<int> shape = lv.in_shape;
    std::vector<double> next;
    for (size_t a = 0; a < shape.size(); ++a) {
        const int n = lv.in_shape[a];
        const int nc = lv.nc[a];
        apply_along_axis(cur, shape, static_cast<int>(a), 2 * nc, next,
                         [&](const double* gx, int, double* gy) {
                             std::fill(gy, gy + 2 * nc, 0.0);
                             line.synthesize_adjoint(gx, n, gy, gy + nc);
                         });
        shape[a] = 2 * nc;
        cur.swap(next);
    }
    gout.swap(cur);
}

namespace {

// Copies one 2^d-corner block between the interleaved level array
// (shape 2*nc per axis, low half then high half along each) and a flat
// subband buffer. dir=true: array -> buffer.
void move_block(std::vector<double>& array, const std::vector<int>& nc, unsigned mask,
                double* buffer, bool to_buffer) {
    const size_t d = nc.size();
    std::vector<int> full(d);
    for (size_t a = 0; a < d; ++a) full[a] = 2 * nc[a];
    const int count = prod(nc);
    std::vector<int> idx(d, 0);
    for (int c = 0; c < count; ++c) {
        // array index with high-half offsets per mask
        size_t off = 0;
        for (size_t a = 0; a < d; ++a) {
            const int pos = idx[a] + (((mask >> a) & 1u) ? nc[a] : 0);
            off = off * static_cast<size_t>(full[a]) + static_cast<size_t>(pos);
        }
        if (to_buffer)
            buffer[c] = array[off];
        else
            array[off] = buffer[c];
        for (int a = static_cast<int>(d) - 1; a >= 0; --a) {
            if (++idx[static_cast<size_t>(a)] < nc[static_cast<size_t>(a)]) break;
            idx[static_cast<size_t>(a)] = 0;
        }
    }
}

}  // namespace

void DwtPlan::forward(const double* field, double* coeffs) const {
    std::vector<double> approx(field, field + input_size_);
    std::vector<double> full;
    const unsigned nmask = 1u << spatial_shape_.size();
    for (int lv = 1; lv <= levels(); ++lv) {
        const Level& L = levels_[static_cast<size_t>(lv - 1)];
        analyze_level(L, approx, full);
        for (unsigned mask = 1; mask < nmask; ++mask) {
            const Block& b = block(lv, mask);
            move_block(full, L.nc, mask, coeffs + b.offset, true);
        }
        approx.resize(static_cast<size_t>(prod(L.nc)));
        move_block(full, L.nc, 0, approx.data(), true);
    }
    const Block& ab = blocks_.back();
    std::copy(approx.begin(), approx.end(), coeffs + ab.offset);
}

void DwtPlan::inverse(const double* coeffs, double* field) const {
    const Block& ab = blocks_.back();
    std::vector<double> approx(coeffs + ab.offset, coeffs + ab.offset + ab.size);
    const unsigned nmask = 1u << spatial_shape_.size();
    std::vector<double> full, rec;
    for (int lv = levels(); lv >= 1; --lv) {
        const Level& L = levels_[static_cast<size_t>(lv - 1)];
        std::vector<int> fullshape(L.nc.size());
        for (size_t a = 0; a < L.nc.size(); ++a) fullshape[a] = 2 * L.nc[a];
        full.assign(static_cast<size_t>(prod(fullshape)), 0.0);
        move_block(full, L.nc, 0, approx.data(), false);
        for (unsigned mask = 1; mask < nmask; ++mask) {
            const Block& b = block(lv, mask);
            std::vector<double> buf(coeffs + b.offset, coeffs + b.offset + b.size);
            move_block(full, L.nc, mask, buf.data(), false);
        }
        synthesize_level(L, full, rec);
        approx.swap(rec);
    }
    std::copy(approx.begin(), approx.end(), field);
}

void DwtPlan::forward_adjoint(const double* coeff_grad, double* field_grad) const {
    const Block& ab = blocks_.back();
    std::vector<double> gapprox(coeff_grad + ab.offset, coeff_grad + ab.offset + ab.size);
    const unsigned nmask = 1u << spatial_shape_.size();
    std::vector<double> full, gin;
    for (int lv = levels(); lv >= 1; --lv) {
        const Level& L = levels_[static_cast<size_t>(lv - 1)];
        std::vector<int> fullshape(L.nc.size());
        for (size_t a = 0; a < L.nc.size(); ++a) fullshape[a] = 2 * L.nc[a];
        full.assign(static_cast<size_t>(prod(fullshape)), 0.0);
        move_block(full, L.nc, 0, gapprox.data(), false);
        for (unsigned mask = 1; mask < nmask; ++mask) {
            const Block& b = block(lv, mask);
            std::vector<double> buf(coeff_grad + b.offset, coeff_grad + b.offset + b.size);
            move_block(full, L.nc, mask, buf.data(), false);
        }
        analyze_level_adjoint(L, full, gin);
        gapprox.swap(gin);
    }
    std::copy(gapprox.begin(), gapprox.end(), field_grad);
}

void DwtPlan::inverse_adjoint(const double* field_grad, double* coeff_grad) const {
    std::vector<double> gapprox(field_grad, field_grad + input_size_);
    std::vector<double> full;
    const unsigned nmask = 1u << spatial_shape_.size();
    for (int lv = 1; lv <= levels(); ++lv) {
        const Level& L = levels_[static_cast<size_t>(lv - 1)];
        synthesize_level_adjoint(L, gapprox, full);
        for (unsigned mask = 1; mask < nmask; ++mask) {
            const Block& b = block(lv, mask);
            move_block(full, L.nc, mask, coeff_grad + b.offset, true);
        }
        gapprox.resize(static_cast<size_t>(prod(L.nc)));
        move_block(full, L.nc, 0, gapprox.data(), true);
    }
    const Block& ab = blocks_.back();
    std::copy(gapprox.begin(), gapprox.end(), coeff_grad + ab.offset);
}

// ---------------------------------------------------------------------------
// Standalone API
// ---------------------------------------------------------------------------

std::vector<double> WaveletCoeffs::block_values(int level, unsigned mask) const {
    for (const auto& b : blocks)
        if (b.level == level && b.mask == mask)
            return std::vector<double>(flat.begin() + b.offset,
                                       flat.begin() + b.offset + b.size);
    throw ShapeError("WaveletCoeffs: no block for level " + std::to_string(level) +
                     " mask " + std::to_string(mask));
}

WaveletCoeffs dwt_forward(const std::vector<double>& field, const std::vector<int>& shape,
                          const WaveletFilter& filter, int levels, BoundaryMode mode) {
    if (static_cast<int>(field.size()) != prod(shape))
        throw ShapeError("dwt_forward: field size does not match shape");
    DwtPlan plan(shape, filter, levels, mode);
    WaveletCoeffs c;
    c.original_shape = shape;
    c.levels = levels;
    c.family_order = filter.order;
    c.mode = mode;
    c.blocks = plan.blocks();
    c.flat.assign(static_cast<size_t>(plan.coeff_size()), 0.0);
    plan.forward(field.data(), c.flat.data());
    return c;
}

std::vector<double> dwt_inverse(const WaveletCoeffs& coeffs, const WaveletFilter& filter) {
    if (filter.order != coeffs.family_order)
        throw ShapeError("dwt_inverse: filter db" + std::to_string(filter.order) +
                         " does not match coefficients db" +
                         std::to_string(coeffs.family_order));
    DwtPlan plan(coeffs.original_shape, filter, coeffs.levels, coeffs.mode);
    if (plan.coeff_size() != static_cast<int>(coeffs.flat.size()))
        throw ShapeError("dwt_inverse: coefficient count " +
                         std::to_string(coeffs.flat.size()) + " does not match plan (" +
                         std::to_string(plan.coeff_size()) + ")");
    std::vector<double> out(static_cast<size_t>(plan.input_size()), 0.0);
    plan.inverse(coeffs.flat.data(), out.data());
    return out;
}

// ---------------------------------------------------------------------------
// Autodiff wrappers
// ---------------------------------------------------------------------------

Tensor dwt_op(const Tensor& field, const DwtPlan& plan) {
    if (field.rank() < 2)
        throw ShapeError("dwt_op: field must be (channels, spatial...), got " +
                         shape_str(field.shape()));
    Shape expect{field.dim(0)};
    for (int s : plan.spatial_shape()) expect.push_back(s);
    if (field.shape() != expect)
        throw ShapeError("dwt_op: field " + shape_str(field.shape()) +
                         " does not match plan spatial shape");
    const int C = field.dim(0);
    const int in_n = plan.input_size();
    const int out_n = plan.coeff_size();
    std::vector<double> out(static_cast<size_t>(C) * out_n);
    for (int c = 0; c < C; ++c)
        plan.forward(field.data() + static_cast<std::int64_t>(c) * in_n,
                     out.data() + static_cast<std::int64_t>(c) * out_n);

    if (!field.requires_grad() || !grad_recording_enabled())
        return Tensor(Shape{C, out_n}, std::move(out));

    // The plan is captured by pointer; it must outlive the recorded graph.
    auto node = std::make_shared<detail::TensorNode>();
    node->op = "dwt";
    node->shape = {C, out_n};
    node->value = std::move(out);
    node->requires_grad = true;
    node->inputs = {field.node()};
    auto in_node = field.node();
    const DwtPlan* p = &plan;
    node->backward_fn = [in_node, p, C, in_n, out_n](detail::TensorNode& o) {
        in_node->ensure_grad();
        std::vector<double> g(static_cast<size_t>(in_n));
        for (int c = 0; c < C; ++c) {
            p->forward_adjoint(o.grad.data() + static_cast<std::int64_t>(c) * out_n,
                               g.data());
            double* dst = in_node->grad.data() + static_cast<std::int64_t>(c) * in_n;
            for (int i = 0; i < in_n; ++i) dst[i] += g[static_cast<size_t>(i)];
        }
    };
    return detail::make_tensor(node);
}

Tensor idwt_op(const Tensor& coeffs, const DwtPlan& plan) {
    if (coeffs.rank() != 2 || coeffs.dim(1) != plan.coeff_size())
        throw ShapeError("idwt_op: coeffs must be (channels, " +
                         std::to_string(plan.coeff_size()) + "), got " +
                         shape_str(coeffs.shape()));
    const int C = coeffs.dim(0);
    const int in_n = plan.coeff_size();
    const int out_n = plan.input_size();
    std::vector<double> out(static_cast<size_t>(C) * out_n);
    for (int c = 0; c < C; ++c)
        plan.inverse(coeffs.data() + static_cast<std::int64_t>(c) * in_n,
                     out.data() + static_cast<std::int64_t>(c) * out_n);
    Shape out_shape{C};
    for (int s : plan.spatial_shape()) out_shape.push_back(s);

    if (!coeffs.requires_grad() || !grad_recording_enabled())
        return Tensor(std::move(out_shape), std::move(out));

    auto node = std::make_shared<detail::TensorNode>();
    node->op = "idwt";
    node->shape = std::move(out_shape);
    node->value = std::move(out);
    node->requires_grad = true;
    node->inputs = {coeffs.node()};
    auto in_node = coeffs.node();
    const DwtPlan* p = &plan;
    node->backward_fn = [in_node, p, C, in_n, out_n](detail::TensorNode& o) {
        in_node->ensure_grad();
        std::vector<double> g(static_cast<size_t>(in_n));
        for (int c = 0; c < C; ++c) {
            p->inverse_adjoint(o.grad.data() + static_cast<std::int64_t>(c) * out_n,
                               g.data());
            double* dst = in_node->grad.data() + static_cast<std::int64_t>(c) * in_n;
            for (int i = 0; i < in_n; ++i) dst[i] += g[static_cast<size_t>(i)];
        }
    };
    return detail::make_tensor(node);
}

}  // namespace gwf
