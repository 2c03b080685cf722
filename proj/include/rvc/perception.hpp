#pragma once

// Image-only stand-ins for the three learned models: needle tip keypoint on
// microscope frames, contact and puncture classification on B-scans. Inputs
// are frames only; nothing here can see the world state.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rvc/error.hpp"
#include "rvc/geometry.hpp"
#include "rvc/image.hpp"
#include "rvc/imaging.hpp"

namespace rvc::perception {

// ------------------------------------------------------------ components

struct Component {
    std::vector<std::pair<int, int>> pixels;
    int u0 = 0, v0 = 0, u1 = -1, v1 = -1;

    std::size_t area() const { return pixels.size(); }
};

/// Largest 8-connected component of {I >= threshold}. Ties go to the
/// component found first in raster order.
inline std::optional<Component> largest_component(const GrayImage& img, double threshold) {
    const int w = img.width();
    const int h = img.height();
    if (threshold > 255.0) return std::nullopt;
    // Integer pixels: I >= threshold  <=>  I >= ceil(threshold).
    const auto t = static_cast<std::uint8_t>(std::max(0.0, std::ceil(threshold)));
    const auto px = img.pixels();
    std::vector<std::uint8_t> seen(px.size(), 0);
    std::optional<Component> best;
    std::vector<std::pair<int, int>> stack;
    for (std::size_t i = 0; i < px.size(); ++i) {
        if (px[i] < t || seen[i]) continue;
        const int u = static_cast<int>(i % static_cast<std::size_t>(w));
        const int v = static_cast<int>(i / static_cast<std::size_t>(w));
        Component c{{}, u, v, u, v};
        seen[i] = 1;
        stack.assign(1, {u, v});
        while (!stack.empty()) {
            const auto [pu, pv] = stack.back();
            stack.pop_back();
            c.pixels.emplace_back(pu, pv);
            c.u0 = std::min(c.u0, pu);
            c.u1 = std::max(c.u1, pu);
            c.v0 = std::min(c.v0, pv);
            c.v1 = std::max(c.v1, pv);
            for (int dv = -1; dv <= 1; ++dv) {
                const int nv = pv + dv;
                if (nv < 0 || nv >= h) continue;
                for (int du = -1; du <= 1; ++du) {
                    const int nu = pu + du;
                    if (nu < 0 || nu >= w) continue;
                    const std::size_t j = static_cast<std::size_t>(nv) * static_cast<std::size_t>(w) + nu;
                    if (seen[j] || px[j] < t) continue;
                    seen[j] = 1;
                    stack.emplace_back(nu, nv);
                }
            }
        }
        if (!best || c.area() > best->area()) best = std::move(c);
    }
    return best;
}

// ------------------------------------------------------------ tip detect

struct TipDetection {
    Vec2 tip_px;
    PixelRect bbox;
    double confidence = 0.0;
};

struct TipDetectorConfig {
    double threshold_frac = 0.45;  // of the way from background to white
    std::size_t min_area = 4;
    Vec2 azimuth{1.0, 0.0};  // image direction the needle advances along
    int bbox_side = 50;
    double tip_radius_px = 1.5;  // apparent radius of the tip disk
};

namespace detail {

/// Sub-pixel tip centre: least-squares fit of I = b + a * g(p - c), where g
/// is a disk of radius r with a one-pixel linear edge, over the pixels ahead
/// of the initial estimate (the shaft never reaches them). Coarse-to-fine
/// grid search over c; a and b are solved in closed form.
inline Vec2 fit_tip_disk(const GrayImage& img, Vec2 c0, Vec2 az, double r) {
    struct Sample {
        Vec2 p;
        double i;
    };
    std::vector<Sample> pts;
    const int cu = static_cast<int>(std::lround(c0.x));
    const int cv = static_cast<int>(std::lround(c0.y));
    const int reach = static_cast<int>(std::ceil(r + 2.0));
    for (int dv = -reach; dv <= reach; ++dv) {
        for (int du = -reach; du <= reach; ++du) {
            const int u = cu + du;
            const int v = cv + dv;
            if (!img.contains(u, v)) continue;
            const Vec2 p{double(u), double(v)};
            if (dot(p - c0, az) < 0.0 || norm(p - c0) > r + 1.5) continue;
            pts.push_back({p, double(img.at(u, v))});
        }
    }
    if (pts.size() < 6) return c0;
    auto sse = [&](Vec2 c) {
        double n = 0, sg = 0, sgg = 0, si = 0, sgi = 0, sii = 0;
        for (const auto& s : pts) {
            const double g = std::clamp(r + 0.5 - norm(s.p - c), 0.0, 1.0);
            n += 1;
            sg += g;
            sgg += g * g;
            si += s.i;
            sgi += g * s.i;
            sii += s.i * s.i;
        }
        const double det = n * sgg - sg * sg;
        if (det < 1e-9) return std::numeric_limits<double>::infinity();
        const double a = (n * sgi - sg * si) / det;
        const double b = (si - a * sg) / n;
        return sii - 2 * a * sgi - 2 * b * si + a * a * sgg + 2 * a * b * sg + n * b * b;
    };
    Vec2 best = c0;
    double best_sse = sse(c0);
    for (double step : {0.1, 0.02, 0.004}) {
        const Vec2 base = best;
        for (int i = -6; i <= 6; ++i) {
            for (int j = -6; j <= 6; ++j) {
                const Vec2 c = base + Vec2{i * step, j * step};
                const double e = sse(c);
                if (e < best_sse) {
                    best_sse = e;
                    best = c;
                }
            }
        }
    }
    return best;
}

}  // namespace detail

inline PixelRect centered_box(Vec2 c, int side, int width, int height) {
    const double h = 0.5 * side;
    const double u0 = std::clamp(c.x - h, -0.5, width - 0.5);
    const double v0 = std::clamp(c.y - h, -0.5, height - 0.5);
    const double u1 = std::clamp(c.x + h, -0.5, width - 0.5);
    const double v1 = std::clamp(c.y + h, -0.5, height - 0.5);
    return {u0, v0, u1 - u0, v1 - v0};
}

/// Threshold, keep the largest blob, take its most advanced pixel along the
/// azimuth and refine with a 5x5 intensity-weighted centroid.
inline TipDetection detect_tip(const imaging::MicroscopeFrame& frame, const TipDetectorConfig& cfg = {}) {
    const GrayImage& img = frame.image;
    const double bg = median_intensity(img);
    const double thr = bg + cfg.threshold_frac * (255.0 - bg);
    auto comp = largest_component(img, thr);
    if (!comp || comp->area() < cfg.min_area)
        throw Error(ErrorCode::NoNeedleDetected, "no bright component of sufficient area");

    const Vec2 az = normalized(cfg.azimuth);
    Vec2 centroid;
    double sum_i = 0.0;
    for (auto [u, v] : comp->pixels) {
        centroid = centroid + Vec2{double(u), double(v)};
        sum_i += img.at(u, v);
    }
    centroid = centroid / double(comp->area());
    const double mean_i = sum_i / double(comp->area());

    std::pair<int, int> ext = comp->pixels.front();
    double best_proj = -1e300;
    double best_d = 1e300;
    for (auto [u, v] : comp->pixels) {
        const Vec2 p{double(u), double(v)};
        const double proj = dot(p, az);
        const double d = norm(p - centroid);
        if (proj > best_proj + 1e-9 || (std::abs(proj - best_proj) <= 1e-9 && d < best_d)) {
            best_proj = proj;
            best_d = d;
            ext = {u, v};
        }
    }

    // Baseline from the 7x7 ring so the centroid ignores the local floor.
    auto refine = [&](int cu, int cv) {
        std::vector<std::uint8_t> ring;
        for (int dv = -3; dv <= 3; ++dv)
            for (int du = -3; du <= 3; ++du)
                if (std::max(std::abs(du), std::abs(dv)) == 3) ring.push_back(img.clamped(cu + du, cv + dv));
        std::nth_element(ring.begin(), ring.begin() + ring.size() / 2, ring.end());
        const double baseline = ring[ring.size() / 2];
        Vec2 acc;
        double wsum = 0.0;
        for (int dv = -2; dv <= 2; ++dv) {
            for (int du = -2; du <= 2; ++du) {
                const int u = cu + du;
                const int v = cv + dv;
                if (!img.contains(u, v)) continue;
                const double wgt = std::max(0.0, img.at(u, v) - baseline - 20.0);
                acc = acc + Vec2{double(u), double(v)} * wgt;
                wsum += wgt;
            }
        }
        return wsum > 0.0 ? acc / wsum : Vec2{double(cu), double(cv)};
    };
    const Vec2 tip = detail::fit_tip_disk(img, refine(ext.first, ext.second), az, cfg.tip_radius_px);

    TipDetection out;
    out.tip_px = tip;
    out.bbox = centered_box(tip, cfg.bbox_side, img.width(), img.height());
    out.confidence = std::clamp((mean_i - bg) / 255.0, 0.0, 1.0);
    return out;
}

// ------------------------------------------------------------ B-scan scene

/// Geometry extracted from one B-scan: where the needle blob and the
/// undisturbed top wall are, in pixel rows (increasing downward).
struct BScanScene {
    double background = 0.0;
    double needle_level = 0.0;
    double tip_col = 0.0;
    double tip_row = 0.0;
    double ridge_row = 0.0;
    double ridge_level = 0.0;
    PixelRect blob_box;
    GrayImage filtered;      // 3x3 median
    GrayImage ridge_filtered;  // horizontal median
};

struct BScanAnalyzerConfig {
    double blob_frac = 0.85;
    std::size_t min_blob_area = 4;
    int ridge_exclusion_px = 20;  // columns this close to the blob are not used for the reference ridge
    int max_blob_width_px = 24;   // wider bright runs are wall, not needle
};

namespace detail {

inline double median_of(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (v.size() % 2 == 1) return *mid;
    const double hi = *mid;
    const double lo = *std::max_element(v.begin(), mid);
    return 0.5 * (lo + hi);
}

inline std::uint8_t median5(std::array<std::uint8_t, 5> p) {
    using rvc::detail::sort2;
    sort2(p[0], p[1]); sort2(p[3], p[4]); sort2(p[0], p[3]);
    sort2(p[1], p[4]); sort2(p[1], p[2]); sort2(p[2], p[3]);
    sort2(p[1], p[2]);
    return p[2];
}

/// Median over a horizontal 5-pixel window: removes isolated salt while
/// keeping thin horizontal ridges intact.
inline GrayImage median_filter_h5(const GrayImage& img) {
    GrayImage out(img.width(), img.height());
    std::array<std::uint8_t, 5> w{};
    for (int v = 0; v < img.height(); ++v) {
        for (int u = 0; u < img.width(); ++u) {
            for (int k = 0; k < 5; ++k) w[static_cast<std::size_t>(k)] = img.clamped(u + k - 2, v);
            out.at(u, v) = median5(w);
        }
    }
    return out;
}

inline double coverage(double i, double under, double full) {
    if (std::abs(full - under) < 1e-9) return i >= full ? 1.0 : 0.0;
    return std::clamp((i - under) / (full - under), 0.0, 1.0);
}

}  // namespace detail

inline BScanScene analyze_bscan(const imaging::BScanFrame& frame, const BScanAnalyzerConfig& cfg = {}) {
    const GrayImage& img = frame.image;
    BScanScene sc;
    sc.filtered = median_filter3x3(img);
    sc.ridge_filtered = detail::median_filter_h5(img);
    sc.background = median_intensity(img);
    const auto px = sc.filtered.pixels();
    sc.needle_level = *std::max_element(px.begin(), px.end());
    if (sc.needle_level - sc.background < 40.0)
        throw Error(ErrorCode::NeedleNotInScan, "B-scan has no bright structure");
    const double thr = sc.background + cfg.blob_frac * (sc.needle_level - sc.background);
    auto blob = largest_component(sc.filtered, thr);
    if (!blob || blob->area() < cfg.min_blob_area)
        throw Error(ErrorCode::NeedleNotInScan, "no needle blob in the B-scan");
    if (blob->u1 - blob->u0 + 1 > cfg.max_blob_width_px)
        throw Error(ErrorCode::NeedleNotInScan, "brightest structure is a wall ridge, not a needle");
    sc.blob_box = {double(blob->u0) - 0.5, double(blob->v0) - 0.5, double(blob->u1 - blob->u0 + 1),
                   double(blob->v1 - blob->v0 + 1)};

    // Horizontal centre from the excess intensity of the blob's rows.
    double col_acc = 0.0;
    double col_w = 0.0;
    for (int v = blob->v0; v <= blob->v1; ++v) {
        for (int u = std::max(0, blob->u0 - 2); u <= std::min(img.width() - 1, blob->u1 + 2); ++u) {
            const double wgt = std::max(0.0, double(img.at(u, v)) - thr);
            col_acc += wgt * u;
            col_w += wgt;
        }
    }
    sc.tip_col = col_w > 0.0 ? col_acc / col_w : 0.5 * (blob->u0 + blob->u1);

    // Vertical centre: midpoint of the sub-pixel top and bottom edges in the
    // central columns.
    const int c0 = static_cast<int>(std::lround(sc.tip_col));
    std::vector<double> centres;
    for (int u = c0 - 1; u <= c0 + 1; ++u) {
        if (u < 0 || u >= img.width()) continue;
        int ra = -1, rb = -1;
        for (int v = blob->v0; v <= blob->v1; ++v) {
            if (sc.filtered.at(u, v) >= thr) {
                if (ra < 0) ra = v;
                rb = v;
            }
        }
        if (ra < 0) continue;
        const double full = sc.needle_level;
        const double under_top = img.clamped(u, ra - 3);
        const double under_bot = img.clamped(u, rb + 3);
        auto cov_top = [&](int v) { return v < 0 ? 0.0 : detail::coverage(img.at(u, v), under_top, full); };
        auto cov_bot = [&](int v) {
            return v >= img.height() ? 0.0 : detail::coverage(img.at(u, v), under_bot, full);
        };
        const double top = ra + 0.5 - cov_top(ra) - cov_top(ra - 1);
        const double bottom = rb - 0.5 + cov_bot(rb) + cov_bot(rb + 1);
        centres.push_back(0.5 * (top + bottom));
    }
    if (centres.empty()) throw Error(ErrorCode::NeedleNotInScan, "blob has no central column");
    double s = 0.0;
    for (double c : centres) s += c;
    sc.tip_row = s / double(centres.size());

    // Reference ridge: first bright run in each column away from the blob,
    // located on the filtered image and centroided on the raw one.
    const double ridge_thr = sc.background + 0.3 * (sc.needle_level - sc.background);
    std::vector<double> rows;
    std::vector<double> levels;
    for (int u = 0; u < img.width(); ++u) {
        if (std::abs(u - sc.tip_col) < cfg.ridge_exclusion_px) continue;
        int v = 0;
        while (v < img.height() && sc.ridge_filtered.at(u, v) < ridge_thr) ++v;
        if (v >= img.height()) continue;
        int e = v;
        while (e + 1 < img.height() && sc.ridge_filtered.at(u, e + 1) >= ridge_thr) ++e;
        double acc = 0.0;
        double wsum = 0.0;
        double peak = 0.0;
        for (int r = std::max(0, v - 2); r <= std::min(img.height() - 1, e + 2); ++r) {
            const double wgt = std::max(0.0, double(img.at(u, r)) - sc.background);
            acc += wgt * r;
            wsum += wgt;
            peak = std::max(peak, double(sc.ridge_filtered.at(u, r)));
        }
        if (wsum <= 0.0) continue;
        rows.push_back(acc / wsum);
        levels.push_back(peak);
    }
    if (rows.size() < 5) throw Error(ErrorCode::NeedleNotInScan, "no vessel wall visible beside the needle");
    sc.ridge_row = detail::median_of(rows);
    sc.ridge_level = detail::median_of(levels);
    return sc;
}

// ------------------------------------------------------------ contact

struct ContactDecision {
    double probability = 0.0;
    bool decision = false;
    double threshold_used = 0.5;
    double gap_px = 0.0;
};

inline constexpr double contact_steepness_per_px = 0.5;

/// Probability of contact from the signed gap g between the needle and the
/// wall (positive while the needle is above it).
inline double contact_probability(double gap_px) {
    return 1.0 / (1.0 + std::exp(contact_steepness_per_px * gap_px));
}

inline ContactDecision decide_contact(double gap_px, double threshold) {
    ContactDecision d;
    d.gap_px = gap_px;
    d.probability = contact_probability(gap_px);
    d.threshold_used = threshold;
    d.decision = d.probability >= threshold;
    return d;
}

inline ContactDecision classify_contact(const imaging::BScanFrame& frame, double threshold = 0.5) {
    require(threshold >= 0.0 && threshold <= 1.0, ErrorCode::InvalidArgument, "threshold outside [0, 1]");
    const BScanScene sc = analyze_bscan(frame);
    return decide_contact(sc.ridge_row - sc.tip_row, threshold);
}

// ------------------------------------------------------------ puncture

struct PunctureDecision {
    PixelRect bbox;
    bool decision = false;
    double confidence = 0.0;
};

struct PunctureConfig {
    double min_depth_below_ridge_px = 2.0;
    double drop_fraction = 0.5;
    int min_run = 3;
    int probe_width = 8;  // columns examined on each side of the shadow
};

inline PunctureDecision detect_puncture(const imaging::BScanFrame& frame, double conf_min = 0.5,
                                        const PunctureConfig& cfg = {}) {
    require(conf_min >= 0.0 && conf_min <= 1.0, ErrorCode::InvalidArgument, "conf_min outside [0, 1]");
    const BScanScene sc = analyze_bscan(frame);
    const GrayImage& f = sc.ridge_filtered;
    const double ref_excess = std::max(1.0, sc.ridge_level - sc.background);
    const double depth_px = sc.tip_row - sc.ridge_row;

    // Ridge strength per column in the band between the reference row and the
    // tip, which contains the wall whether or not it is dimpled.
    const int r0 = std::max(0, int(std::floor(std::min(sc.ridge_row, sc.tip_row))) - 3);
    const int r1 = std::min(f.height() - 1, int(std::ceil(std::max(sc.ridge_row, sc.tip_row))) + 1);
    auto drop_at = [&](int u) {
        double peak = 0.0;
        for (int r = r0; r <= r1; ++r) peak = std::max(peak, double(f.at(u, r)));
        return 1.0 - std::clamp((peak - sc.background) / ref_excess, 0.0, 1.0);
    };

    const double half = 0.5 * sc.blob_box.width;
    double best_drop = 0.0;
    int best_run = 0;
    for (int side : {-1, 1}) {
        const int start = int(std::lround(sc.tip_col + side * (half + 2.0)));
        int run = 0;
        double run_drop = 0.0;
        for (int k = 0; k < cfg.probe_width; ++k) {
            const int u = start + side * k;
            if (u < 0 || u >= f.width()) break;
            const double d = drop_at(u);
            if (d >= cfg.drop_fraction) {
                ++run;
                run_drop += d;
                if (run > best_run || (run == best_run && run_drop / run > best_drop)) {
                    best_run = run;
                    best_drop = run_drop / run;
                }
            } else {
                run = 0;
                run_drop = 0.0;
            }
        }
    }

    const double contrast = std::clamp((sc.needle_level - sc.background) / 255.0, 0.0, 1.0);
    PunctureDecision out;
    out.bbox = sc.blob_box;
    const bool geometric = depth_px >= cfg.min_depth_below_ridge_px && best_run >= cfg.min_run;
    out.confidence = contrast * best_drop;
    out.decision = geometric && out.confidence >= conf_min;
    return out;
}

// ------------------------------------------------------------ metrics

struct LabeledSample {
    std::string frame_id;
    int true_label = 0;
    int predicted_label = 0;
    double confidence = 0.0;
};

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;
    bool undefined_precision = false;
    bool undefined_recall = false;
    bool undefined_f1 = false;
};

struct Confusion {
    std::size_t tn = 0, fp = 0, fn = 0, tp = 0;
    std::size_t total() const { return tn + fp + fn + tp; }
};

struct MetricsTable {
    std::array<ClassMetrics, 2> classes;
    double accuracy = 0.0;
    Confusion confusion;
    bool any_undefined() const {
        for (const auto& c : classes)
            if (c.undefined_precision || c.undefined_recall || c.undefined_f1) return true;
        return false;
    }
};

inline MetricsTable metrics_from_confusion(const Confusion& cm) {
    require(cm.total() > 0, ErrorCode::EmptySampleSet, "no samples to evaluate");
    MetricsTable t;
    t.confusion = cm;
    auto fill = [](ClassMetrics& m, std::size_t tp, std::size_t fp, std::size_t fn) {
        m.support = tp + fn;
        m.undefined_precision = tp + fp == 0;
        m.undefined_recall = tp + fn == 0;
        m.precision = m.undefined_precision ? 0.0 : double(tp) / double(tp + fp);
        m.recall = m.undefined_recall ? 0.0 : double(tp) / double(tp + fn);
        m.undefined_f1 = m.precision + m.recall == 0.0;
        m.f1 = m.undefined_f1 ? 0.0 : 2.0 * m.precision * m.recall / (m.precision + m.recall);
    };
    fill(t.classes[0], cm.tn, cm.fn, cm.fp);
    fill(t.classes[1], cm.tp, cm.fp, cm.fn);
    t.accuracy = double(cm.tp + cm.tn) / double(cm.total());
    return t;
}

inline MetricsTable evaluate_classifier(const std::vector<LabeledSample>& samples) {
    require(!samples.empty(), ErrorCode::EmptySampleSet, "no samples to evaluate");
    Confusion cm;
    for (const auto& s : samples) {
        require((s.true_label == 0 || s.true_label == 1) && (s.predicted_label == 0 || s.predicted_label == 1),
                ErrorCode::InvalidArgument, "labels must be binary");
        if (s.true_label == 1) (s.predicted_label == 1 ? cm.tp : cm.fn)++;
        else (s.predicted_label == 1 ? cm.fp : cm.tn)++;
    }
    return metrics_from_confusion(cm);
}

// ------------------------------------------------------------ JSON

using nlohmann::json;

inline void to_json(json& j, const TipDetection& d) {
    j = json{{"tip_px", d.tip_px},
             {"bbox", {d.bbox.u0, d.bbox.v0, d.bbox.width, d.bbox.height}},
             {"confidence", d.confidence}};
}
inline void to_json(json& j, const ContactDecision& d) {
    j = json{{"probability", d.probability},
             {"decision", d.decision ? 1 : 0},
             {"threshold_used", d.threshold_used},
             {"gap_px", d.gap_px}};
}
inline void to_json(json& j, const PunctureDecision& d) {
    j = json{{"bbox", {d.bbox.u0, d.bbox.v0, d.bbox.width, d.bbox.height}},
             {"decision", d.decision ? 1 : 0},
             {"confidence", d.confidence}};
}

inline void to_json(json& j, const ClassMetrics& m) {
    j = json{{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"support", m.support},
             {"undefined", m.undefined_precision || m.undefined_recall || m.undefined_f1}};
}
inline void to_json(json& j, const MetricsTable& t) {
    j = json{{"class_0", t.classes[0]},
             {"class_1", t.classes[1]},
             {"accuracy", t.accuracy},
             {"confusion", {{"tn", t.confusion.tn}, {"fp", t.confusion.fp}, {"fn", t.confusion.fn},
                            {"tp", t.confusion.tp}}}};
}

}  // namespace rvc::perception
