#pragma once

// Synthetic top-down microscope frames and depth-resolved B-scans rendered
// from ground truth, plus the artifact corruptions applied before perception.
//
// Pixel convention: pixel (u, v) has its centre at continuous coordinate
// (u, v) and covers [u-0.5, u+0.5] x [v-0.5, v+0.5].

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <vector>

#include <json.hpp>

#include "rvc/error.hpp"
#include "rvc/geometry.hpp"
#include "rvc/image.hpp"
#include "rvc/random.hpp"
#include "rvc/world.hpp"

namespace rvc::imaging {

/// Intensity palette shared by both modalities.
namespace palette {
inline constexpr double background = 30.0;
inline constexpr double background_sigma = 10.0;
inline constexpr double vein = 90.0;
inline constexpr double wall = 180.0;
inline constexpr double needle = 250.0;
inline constexpr double shadow = 15.0;
}  // namespace palette

// ------------------------------------------------------------- microscope

struct MicroscopeConfig {
    int width = 512;
    int height = 512;
    double scale_mm_per_px = 0.0586;
    Vec2 origin{-15.0, -15.0};
    double tip_blob_radius_px = 1.5;
    /// Needle points within this height above the vein surface render at full
    /// intensity; brightness falls linearly to zero at focus_fade_mm.
    double depth_of_field_mm = 0.5;
    double focus_fade_mm = 1.5;

    void validate() const {
        require(width > 0 && height > 0, ErrorCode::InvalidConfig, "microscope frame must be nonempty");
        require(scale_mm_per_px > 0.0, ErrorCode::InvalidConfig, "microscope scale must be positive");
        require(focus_fade_mm > depth_of_field_mm, ErrorCode::InvalidConfig, "focus fade must exceed depth of field");
    }
};

struct MicroscopeFrame {
    GrayImage image;
    double scale_mm_per_px = 0.0586;
    Vec2 origin;
    double t = 0.0;

    int width() const { return image.width(); }
    int height() const { return image.height(); }
};

inline Vec2 mm_to_px(const MicroscopeFrame& f, Vec2 xy) { return (xy - f.origin) / f.scale_mm_per_px; }

inline Vec2 px_to_mm(const MicroscopeFrame& f, Vec2 px) {
    require(px.x >= -0.5 && px.y >= -0.5 && px.x <= f.width() - 0.5 && px.y <= f.height() - 0.5,
            ErrorCode::OutOfBounds, "pixel outside the microscope frame");
    return f.origin + px * f.scale_mm_per_px;
}

// ------------------------------------------------------------------ B-scan

/// Vertical slice plane through a line in XOY. The frame spans
/// width * scale millimetres centred on `center`.
struct Scanline {
    Vec2 center;
    Vec2 direction{1.0, 0.0};

    bool operator==(const Scanline&) const = default;
};

struct BScanConfig {
    int width = 224;
    int height = 224;
    double scale_mm_per_px = 0.0357;
    /// Depth window: row 0 sits this far above the undeformed top wall.
    double window_top_above_wall_mm = 80 * 0.0357;
    double needle_blob_radius_mm = 0.1;
    double dimple_flat_mm = 0.2;
    double dimple_radius_mm = 0.7;
    double rupture_gap_half_width_mm = 0.35;
    std::optional<Scanline> scanline;  // defaults to the vein axis through the target

    void validate() const {
        require(width > 0 && height > 0, ErrorCode::InvalidConfig, "B-scan frame must be nonempty");
        require(scale_mm_per_px > 0.0, ErrorCode::InvalidConfig, "B-scan scale must be positive");
        require(needle_blob_radius_mm > 0.0, ErrorCode::InvalidConfig, "needle blob radius must be positive");
        require(dimple_radius_mm > dimple_flat_mm && dimple_flat_mm >= 0.0, ErrorCode::InvalidConfig,
                "dimple radius must exceed its flat part");
        require(rupture_gap_half_width_mm > 0.0, ErrorCode::InvalidConfig, "rupture gap must be positive");
    }
};

struct BScanFrame {
    GrayImage image;
    double scale_mm_per_px = 0.0357;
    Scanline scanline;
    double z_top = 0.0;  // z of row 0
    double t = 0.0;

    int width() const { return image.width(); }
    int height() const { return image.height(); }
    double center_column() const { return 0.5 * (width() - 1); }
};

/// Position in the slice plane: lateral offset along the scanline and height.
struct SlicePoint {
    double s = 0.0;
    double z = 0.0;
};

inline Vec2 mm_to_px(const BScanFrame& f, SlicePoint p) {
    return {p.s / f.scale_mm_per_px + f.center_column(), (f.z_top - p.z) / f.scale_mm_per_px};
}

inline SlicePoint px_to_mm(const BScanFrame& f, Vec2 px) {
    require(px.x >= -0.5 && px.y >= -0.5 && px.x <= f.width() - 0.5 && px.y <= f.height() - 0.5,
            ErrorCode::OutOfBounds, "pixel outside the B-scan frame");
    return {(px.x - f.center_column()) * f.scale_mm_per_px, f.z_top - px.y * f.scale_mm_per_px};
}

inline SlicePoint project_to_slice(const Scanline& line, const Pose3& p) {
    return {dot(p.xy() - line.center, normalized(line.direction)), p.z};
}

/// The default slice: along the vein axis, through `target_xy`.
inline Scanline default_scanline(const world::VeinModel& vein, Vec2 target_xy) {
    return {target_xy, vein.unit_direction()};
}

// ----------------------------------------------------------------- helpers

namespace detail {

inline double overlap(double a0, double a1, double b0, double b1) {
    return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

/// Static speckle layer: N(mean, sigma) per pixel from a seeded stream.
inline std::vector<double> speckle(int w, int h, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> out(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
    for (auto& px : out) px = rng.normal(0.0, palette::background_sigma);
    return out;
}

inline double focus_factor(double height_above_wall, const MicroscopeConfig& cfg) {
    if (height_above_wall <= cfg.depth_of_field_mm) return 1.0;
    if (height_above_wall >= cfg.focus_fade_mm) return 0.0;
    return (cfg.focus_fade_mm - height_above_wall) / (cfg.focus_fade_mm - cfg.depth_of_field_mm);
}

inline double dimple_profile(double d, const BScanConfig& cfg) {
    d = std::abs(d);
    if (d <= cfg.dimple_flat_mm) return 1.0;
    if (d >= cfg.dimple_radius_mm) return 0.0;
    const double x = (d - cfg.dimple_flat_mm) / (cfg.dimple_radius_mm - cfg.dimple_flat_mm);
    return 0.5 * (1.0 + std::cos(std::numbers::pi * x));
}

}  // namespace detail

struct RenderOptions {
    bool draw_needle = true;
    bool draw_shaft = true;
};

// ------------------------------------------------------- microscope render

/// Renders top-down frames. The speckle and vein layers depend only on
/// (seed, vein, config) and are cached between calls; the needle layer is
/// redrawn every frame.
class MicroscopeRenderer {
public:
    explicit MicroscopeRenderer(MicroscopeConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

    const MicroscopeConfig& config() const { return cfg_; }

    MicroscopeFrame render(const world::WorldState& w, const RenderOptions& opt = {}) {
        const std::vector<double>& base = static_layer(w);
        MicroscopeFrame f;
        f.scale_mm_per_px = cfg_.scale_mm_per_px;
        f.origin = cfg_.origin;
        f.t = w.t;
        f.image = layer_u8_;
        if (opt.draw_needle) draw_needle(f, base, w, opt);
        return f;
    }

private:
    const std::vector<double>& static_layer(const world::WorldState& w) {
        const bool hit = cache_seed_ && *cache_seed_ == w.rng_seed && cache_vein_.axis.point == w.vein.axis.point &&
                         cache_vein_.axis.direction == w.vein.axis.direction &&
                         cache_vein_.diameter_mm == w.vein.diameter_mm;
        if (hit) return layer_;
        layer_ = detail::speckle(cfg_.width, cfg_.height, derive_seed(w.rng_seed, 0x6D6963));
        const double s = cfg_.scale_mm_per_px;
        const double half_px = w.vein.half_width() / s;
        for (int v = 0; v < cfg_.height; ++v) {
            for (int u = 0; u < cfg_.width; ++u) {
                const Vec2 xy = cfg_.origin + Vec2{double(u), double(v)} * s;
                const double off = std::abs(w.vein.lateral_offset(xy)) / s;
                const double c = std::clamp(half_px - off + 0.5, 0.0, 1.0);
                layer_[static_cast<std::size_t>(v) * cfg_.width + u] += palette::background +
                                                                        (palette::vein - palette::background) * c;
            }
        }
        layer_u8_ = GrayImage(cfg_.width, cfg_.height);
        auto px = layer_u8_.pixels();
        for (std::size_t i = 0; i < px.size(); ++i) px[i] = to_u8(layer_[i]);
        cache_seed_ = w.rng_seed;
        cache_vein_ = w.vein;
        return layer_;
    }

    void draw_needle(MicroscopeFrame& f, const std::vector<double>& base, const world::WorldState& w,
                     const RenderOptions& opt) const {
        const double s = cfg_.scale_mm_per_px;
        const auto& n = w.needle;
        const double elev = deg_to_rad(n.insertion_angle_deg);
        const Vec2 tip = mm_to_px(f, n.tip.xy());
        const Vec2 back_dir = n.azimuth() * -1.0;
        const double shaft_len_px = opt.draw_shaft ? n.shaft_length_mm * std::cos(elev) / s : 0.0;
        const Vec2 tail = tip + back_dir * shaft_len_px;
        const double half_width = std::max(0.5 * n.tip_diameter_um / 1000.0 / s, 0.8);
        const double blob_r = cfg_.tip_blob_radius_px;
        // Height above the wall of the shaft point whose projection is at
        // distance d_px behind the tip.
        const double wall_z = w.vein.depth_z;
        auto height_at = [&](double d_px) { return n.tip.z - wall_z + d_px * s * std::tan(elev); };

        const double pad = blob_r + 2.0;
        const int u0 = std::max(0, int(std::floor(std::min(tip.x, tail.x) - pad)));
        const int u1 = std::min(f.width() - 1, int(std::ceil(std::max(tip.x, tail.x) + pad)));
        const int v0 = std::max(0, int(std::floor(std::min(tip.y, tail.y) - pad)));
        const int v1 = std::min(f.height() - 1, int(std::ceil(std::max(tip.y, tail.y) + pad)));
        if (u0 > u1 || v0 > v1) return;

        const double tip_focus = detail::focus_factor(height_at(0.0), cfg_);
        for (int v = v0; v <= v1; ++v) {
            for (int u = u0; u <= u1; ++u) {
                const Vec2 p{double(u), double(v)};
                double c = 0.0;
                if (shaft_len_px > 0.0) {
                    const double along = std::clamp(dot(p - tip, back_dir), 0.0, shaft_len_px);
                    const double dist = norm(p - (tip + back_dir * along));
                    const double cov = std::clamp(half_width + 0.5 - dist, 0.0, 1.0);
                    c = cov * detail::focus_factor(height_at(along), cfg_);
                }
                const double blob = std::clamp(blob_r + 0.5 - norm(p - tip), 0.0, 1.0) * tip_focus;
                c = std::max(c, blob);
                if (c <= 0.0) continue;
                const double under = base[static_cast<std::size_t>(v) * f.width() + u];
                f.image.at(u, v) = to_u8(under + (palette::needle - under) * c);
            }
        }
    }

    MicroscopeConfig cfg_;
    std::optional<std::uint64_t> cache_seed_;
    world::VeinModel cache_vein_;
    std::vector<double> layer_;
    GrayImage layer_u8_;
};

inline MicroscopeFrame render_microscope(const world::WorldState& w, const MicroscopeConfig& cfg = {},
                                         const RenderOptions& opt = {}) {
    MicroscopeRenderer r(cfg);
    return r.render(w, opt);
}

// ----------------------------------------------------------- B-scan render

class BScanRenderer {
public:
    explicit BScanRenderer(BScanConfig cfg = {}) : cfg_(std::move(cfg)) { cfg_.validate(); }

    const BScanConfig& config() const { return cfg_; }

    /// `scanline` overrides the configured slice.
    BScanFrame render(const world::WorldState& w, const Scanline& scanline, const RenderOptions& opt = {}) {
        const int W = cfg_.width;
        const int H = cfg_.height;
        const double s = cfg_.scale_mm_per_px;
        BScanFrame f;
        f.scale_mm_per_px = s;
        f.scanline = {scanline.center, normalized(scanline.direction)};
        f.z_top = w.vein.depth_z + cfg_.window_top_above_wall_mm;
        f.t = w.t;
        f.image = GrayImage(W, H);

        const Pose3 tip = w.needle.tip;
        const Vec2 dir = f.scanline.direction;
        const double perp = std::abs(cross(dir, tip.xy() - f.scanline.center));
        require(!opt.draw_needle || perp <= 0.5 * W * s, ErrorCode::ScanlineMissesROI,
                "needle tip is farther than half a frame width from the scanline");

        const std::vector<double>& noise = speckle_layer(w.rng_seed);
        std::vector<double> base(noise.size());
        for (std::size_t i = 0; i < base.size(); ++i) base[i] = palette::background + noise[i];

        const world::VeinModel& vein = w.vein;
        const SlicePoint tip_s = project_to_slice(f.scanline, tip);
        const double deflection = w.tissue.deflection_mm;
        const auto& ts = w.tissue;
        // Rupture centres along the slice; NaN when the wall is intact.
        const double nan = std::numeric_limits<double>::quiet_NaN();
        const double top_gap = ts.top_rupture_xy ? dot(*ts.top_rupture_xy - f.scanline.center, dir) : nan;
        const double bottom_gap = ts.bottom_rupture_xy ? dot(*ts.bottom_rupture_xy - f.scanline.center, dir) : nan;
        const double band = vein.wall_thickness_mm / s;
        const double gap_hw = cfg_.rupture_gap_half_width_mm;

        auto gap_keep = [&](double s_lo, double s_hi, double gap) {
            if (std::isnan(gap)) return 1.0;
            const double removed = detail::overlap(s_lo, s_hi, gap - gap_hw, gap + gap_hw);
            return 1.0 - removed / (s_hi - s_lo);
        };

        for (int col = 0; col < W; ++col) {
            const double s_mid = (col - f.center_column()) * s;
            const double s_lo = s_mid - 0.5 * s;
            const double s_hi = s_mid + 0.5 * s;
            // Fraction of the column that lies over the vein.
            double foot = 0.0;
            for (int k = 0; k < 4; ++k) {
                const Vec2 p = f.scanline.center + dir * (s_lo + (k + 0.5) * 0.25 * s);
                foot += vein.in_footprint(p) ? 0.25 : 0.0;
            }
            if (foot <= 0.0) continue;
            const double top_z = vein.depth_z - deflection * detail::dimple_profile(s_mid - tip_s.s, cfg_);
            const double walls[2][2] = {{(f.z_top - top_z) / s, foot * gap_keep(s_lo, s_hi, top_gap)},
                                        {(f.z_top - vein.far_wall()) / s, foot * gap_keep(s_lo, s_hi, bottom_gap)}};
            for (const auto& wall : walls) {
                const double row_c = wall[0];
                const double weight = wall[1];
                if (weight <= 0.0) continue;
                const int r0 = std::max(0, int(std::floor(row_c - band / 2 - 1)));
                const int r1 = std::min(H - 1, int(std::ceil(row_c + band / 2 + 1)));
                for (int row = r0; row <= r1; ++row) {
                    const double c =
                        weight * detail::overlap(row - 0.5, row + 0.5, row_c - band / 2, row_c + band / 2);
                    double& px = base[static_cast<std::size_t>(row) * W + col];
                    px = std::max(px, px + (palette::wall - px) * c);
                }
            }
        }

        if (opt.draw_needle) draw_needle(base, mm_to_px(f, tip_s), cfg_.needle_blob_radius_mm / s);

        auto out = f.image.pixels();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = to_u8(base[i]);
        return f;
    }

private:
    const std::vector<double>& speckle_layer(std::uint64_t seed) {
        if (!cache_seed_ || *cache_seed_ != seed) {
            layer_ = detail::speckle(cfg_.width, cfg_.height, derive_seed(seed, 0x6F6374));
            cache_seed_ = seed;
        }
        return layer_;
    }

    /// Blob at the tip with an OCT shadow underneath; 8x8 supersampling in
    /// the blob's box, exact column coverage below it.
    void draw_needle(std::vector<double>& base, Vec2 c, double r) const {
        const int W = cfg_.width;
        const int H = cfg_.height;
        const int u0 = std::max(0, int(std::floor(c.x - r - 1)));
        const int u1 = std::min(W - 1, int(std::ceil(c.x + r + 1)));
        if (u0 > u1) return;
        const int v_box0 = std::max(0, int(std::floor(c.y - r - 1)));
        const int v_box1 = std::min(H - 1, int(std::ceil(c.y + r + 1)));
        constexpr int ss = 8;
        for (int u = u0; u <= u1; ++u) {
            const double shadow_cov = detail::overlap(u - 0.5, u + 0.5, c.x - r, c.x + r);
            for (int v = std::max(0, v_box0); v < H; ++v) {
                double& px = base[static_cast<std::size_t>(v) * W + u];
                if (v <= v_box1) {
                    double acc = 0.0;
                    for (int a = 0; a < ss; ++a) {
                        for (int b = 0; b < ss; ++b) {
                            const double x = u - 0.5 + (a + 0.5) / ss;
                            const double y = v - 0.5 + (b + 0.5) / ss;
                            const double dx = x - c.x;
                            const double dy = y - c.y;
                            if (dx * dx + dy * dy <= r * r) acc += palette::needle;
                            else if (std::abs(dx) < r && dy > 0.0) acc += palette::shadow;
                            else acc += px;
                        }
                    }
                    px = acc / (ss * ss);
                } else if (v > c.y) {
                    px = px + (palette::shadow - px) * shadow_cov;
                }
            }
        }
    }

    BScanConfig cfg_;
    std::optional<std::uint64_t> cache_seed_;
    std::vector<double> layer_;
};

inline BScanFrame render_bscan(const world::WorldState& w, const Scanline& scanline, const BScanConfig& cfg = {},
                               const RenderOptions& opt = {}) {
    BScanRenderer r(cfg);
    return r.render(w, scanline, opt);
}

// --------------------------------------------------------------- artifacts

struct Occlusion {
    PixelRect rect;
    double fill = palette::vein;
    double alpha = 1.0;

    bool operator==(const Occlusion&) const = default;
};

struct ArtifactConfig {
    double brightness_pct = 0.0;  // [-15, 15]
    double exposure_pct = 0.0;    // [-10, 10]
    double noise_frac = 0.0;      // [0, 0.001]
    bool hflip = false;
    std::optional<Occlusion> occlusion;
    std::uint64_t seed = 0;

    void validate() const {
        require(brightness_pct >= -15.0 && brightness_pct <= 15.0, ErrorCode::InvalidConfig,
                "brightness_pct outside [-15, 15]");
        require(exposure_pct >= -10.0 && exposure_pct <= 10.0, ErrorCode::InvalidConfig,
                "exposure_pct outside [-10, 10]");
        require(noise_frac >= 0.0 && noise_frac <= 0.001, ErrorCode::InvalidConfig, "noise_frac outside [0, 0.001]");
        if (occlusion) {
            require(occlusion->rect.width >= 0.0 && occlusion->rect.height >= 0.0, ErrorCode::InvalidConfig,
                    "occlusion rectangle must have nonnegative size");
            require(occlusion->alpha >= 0.0 && occlusion->alpha <= 1.0, ErrorCode::InvalidConfig,
                    "occlusion alpha outside [0, 1]");
            require(occlusion->fill >= 0.0 && occlusion->fill <= 255.0, ErrorCode::InvalidConfig,
                    "occlusion fill outside [0, 255]");
        }
    }

    bool is_identity() const {
        return brightness_pct == 0.0 && exposure_pct == 0.0 && noise_frac == 0.0 && !hflip && !occlusion;
    }
};

/// Brightness scales linearly; exposure is a gamma curve with exponent
/// 1 / (1 + exposure), so positive exposure lifts mid-tones.
inline std::array<std::uint8_t, 256> tone_curve(double brightness_pct, double exposure_pct) {
    std::array<std::uint8_t, 256> lut{};
    const double gain = 1.0 + brightness_pct / 100.0;
    const double gamma = 1.0 / (1.0 + exposure_pct / 100.0);
    for (int i = 0; i < 256; ++i) {
        double x = std::clamp(i * gain, 0.0, 255.0);
        if (exposure_pct != 0.0) x = 255.0 * std::pow(x / 255.0, gamma);
        lut[static_cast<std::size_t>(i)] = to_u8(x);
    }
    return lut;
}

/// Applies brightness, exposure, salt noise, flip and occlusion in that
/// order. The salt pattern depends on (cfg.seed, frame time).
inline GrayImage apply_artifacts(const GrayImage& in, const ArtifactConfig& cfg, double frame_t = 0.0) {
    cfg.validate();
    GrayImage out = in;
    if (cfg.is_identity()) return out;
    const auto lut = tone_curve(cfg.brightness_pct, cfg.exposure_pct);
    for (auto& p : out.pixels()) p = lut[p];

    const auto n_salt = static_cast<std::size_t>(std::floor(static_cast<double>(out.size()) * cfg.noise_frac + 1e-9));
    if (n_salt > 0) {
        // Partial Fisher-Yates over pixel indices: n_salt distinct positions.
        std::uint64_t t_bits = 0;
        static_assert(sizeof(double) == sizeof(std::uint64_t));
        std::memcpy(&t_bits, &frame_t, sizeof t_bits);
        Rng rng(derive_seed(cfg.seed, 0x73616C74, t_bits));
        std::vector<std::uint32_t> idx(out.size());
        std::iota(idx.begin(), idx.end(), 0u);
        auto px = out.pixels();
        for (std::size_t i = 0; i < n_salt; ++i) {
            const std::size_t j = i + rng.below(idx.size() - i);
            std::swap(idx[i], idx[j]);
            px[idx[i]] = 255;
        }
    }

    if (cfg.hflip) {
        for (int v = 0; v < out.height(); ++v)
            for (int u = 0; u < out.width() / 2; ++u) std::swap(out.at(u, v), out.at(out.width() - 1 - u, v));
    }

    if (cfg.occlusion) {
        const auto& o = *cfg.occlusion;
        const int u0 = std::max(0, int(std::ceil(o.rect.u0 - 0.5)));
        const int v0 = std::max(0, int(std::ceil(o.rect.v0 - 0.5)));
        const int u1 = std::min(out.width() - 1, int(std::ceil(o.rect.u0 + o.rect.width - 0.5)) - 1);
        const int v1 = std::min(out.height() - 1, int(std::ceil(o.rect.v0 + o.rect.height - 0.5)) - 1);
        for (int v = v0; v <= v1; ++v)
            for (int u = u0; u <= u1; ++u) out.at(u, v) = to_u8(o.alpha * o.fill + (1.0 - o.alpha) * out.at(u, v));
    }
    return out;
}

template <typename Frame>
Frame apply_artifacts(Frame frame, const ArtifactConfig& cfg) {
    frame.image = apply_artifacts(frame.image, cfg, frame.t);
    return frame;
}

// ------------------------------------------------------------------- JSON

using nlohmann::json;

inline void to_json(json& j, const Scanline& l) { j = json{{"center", l.center}, {"direction", l.direction}}; }
inline void from_json(const json& j, Scanline& l) {
    j.at("center").get_to(l.center);
    j.at("direction").get_to(l.direction);
}

inline void to_json(json& j, const Occlusion& o) {
    j = json{{"rect", {o.rect.u0, o.rect.v0, o.rect.width, o.rect.height}}, {"fill", o.fill}, {"alpha", o.alpha}};
}
inline void from_json(const json& j, Occlusion& o) {
    const auto& r = j.at("rect");
    o.rect = {r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>(), r.at(3).get<double>()};
    o.fill = j.value("fill", palette::vein);
    o.alpha = j.value("alpha", 1.0);
}

inline void to_json(json& j, const ArtifactConfig& a) {
    j = json{{"brightness_pct", a.brightness_pct},
             {"exposure_pct", a.exposure_pct},
             {"noise_frac", a.noise_frac},
             {"hflip", a.hflip},
             {"occlusion", a.occlusion},
             {"seed", a.seed}};
}
/// Parses and validates; out-of-range values are rejected here.
inline void from_json(const json& j, ArtifactConfig& a) {
    a.brightness_pct = j.value("brightness_pct", 0.0);
    a.exposure_pct = j.value("exposure_pct", 0.0);
    a.noise_frac = j.value("noise_frac", 0.0);
    a.hflip = j.value("hflip", false);
    a.occlusion = j.value("occlusion", std::optional<Occlusion>{});
    a.seed = j.value("seed", std::uint64_t{0});
    a.validate();
}

inline void to_json(json& j, const MicroscopeConfig& c) {
    j = json{{"width", c.width},
             {"height", c.height},
             {"scale_mm_per_px", c.scale_mm_per_px},
             {"origin", c.origin},
             {"tip_blob_radius_px", c.tip_blob_radius_px},
             {"depth_of_field_mm", c.depth_of_field_mm},
             {"focus_fade_mm", c.focus_fade_mm}};
}
inline void from_json(const json& j, MicroscopeConfig& c) {
    MicroscopeConfig d;
    c.width = j.value("width", d.width);
    c.height = j.value("height", d.height);
    c.scale_mm_per_px = j.value("scale_mm_per_px", d.scale_mm_per_px);
    c.origin = j.value("origin", d.origin);
    c.tip_blob_radius_px = j.value("tip_blob_radius_px", d.tip_blob_radius_px);
    c.depth_of_field_mm = j.value("depth_of_field_mm", d.depth_of_field_mm);
    c.focus_fade_mm = j.value("focus_fade_mm", d.focus_fade_mm);
    c.validate();
}

inline void to_json(json& j, const BScanConfig& c) {
    j = json{{"width", c.width},
             {"height", c.height},
             {"scale_mm_per_px", c.scale_mm_per_px},
             {"window_top_above_wall_mm", c.window_top_above_wall_mm},
             {"needle_blob_radius_mm", c.needle_blob_radius_mm},
             {"dimple_flat_mm", c.dimple_flat_mm},
             {"dimple_radius_mm", c.dimple_radius_mm},
             {"rupture_gap_half_width_mm", c.rupture_gap_half_width_mm},
             {"scanline", c.scanline}};
}
inline void from_json(const json& j, BScanConfig& c) {
    BScanConfig d;
    c.width = j.value("width", d.width);
    c.height = j.value("height", d.height);
    c.scale_mm_per_px = j.value("scale_mm_per_px", d.scale_mm_per_px);
    c.window_top_above_wall_mm = j.value("window_top_above_wall_mm", d.window_top_above_wall_mm);
    c.needle_blob_radius_mm = j.value("needle_blob_radius_mm", d.needle_blob_radius_mm);
    c.dimple_flat_mm = j.value("dimple_flat_mm", d.dimple_flat_mm);
    c.dimple_radius_mm = j.value("dimple_radius_mm", d.dimple_radius_mm);
    c.rupture_gap_half_width_mm = j.value("rupture_gap_half_width_mm", d.rupture_gap_half_width_mm);
    c.scanline = j.value("scanline", std::optional<Scanline>{});
    c.validate();
}

}  // namespace rvc::imaging
