#pragma once

// Batches of trials and the reports built from them: records.csv with one
// row per trial, tableI.csv (timing), tableII.csv (claim vs air injection)
// and report.json with everything plus outlier flags.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rvc/error.hpp"
#include "rvc/image.hpp"
#include "rvc/perception.hpp"
#include "rvc/scenario.hpp"
#include "rvc/session.hpp"

namespace rvc::harness {

// ------------------------------------------------------------------ stats

struct TimingStats {
    std::size_t n = 0;
    double mean = 0.0;
    double median = 0.0;
    double sample_std = 0.0;  // n - 1 denominator; 0 for a single value
    bool operator==(const TimingStats&) const = default;
};

inline TimingStats timing_stats(std::vector<double> xs) {
    require(!xs.empty(), ErrorCode::EmptySampleSet, "no values");
    TimingStats s;
    s.n = xs.size();
    s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / double(s.n);
    std::sort(xs.begin(), xs.end());
    s.median = s.n % 2 ? xs[s.n / 2] : 0.5 * (xs[s.n / 2 - 1] + xs[s.n / 2]);
    if (s.n > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - s.mean) * (x - s.mean);
        s.sample_std = std::sqrt(ss / double(s.n - 1));
    }
    return s;
}

/// Linear-interpolated quantile of sorted data (type 7).
inline double quantile(const std::vector<double>& sorted, double q) {
    const double h = (double(sorted.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - double(lo)) * (sorted[hi] - sorted[lo]);
}

/// Indices of values above Q3 + 1.5 IQR.
inline std::vector<std::size_t> high_outliers(const std::vector<double>& xs) {
    std::vector<std::size_t> out;
    if (xs.size() < 4) return out;
    std::vector<double> s = xs;
    std::sort(s.begin(), s.end());
    const double q1 = quantile(s, 0.25);
    const double q3 = quantile(s, 0.75);
    const double fence = q3 + 1.5 * (q3 - q1);
    for (std::size_t i = 0; i < xs.size(); ++i)
        if (xs[i] > fence) out.push_back(i);
    return out;
}

/// One-sided sign test: P(X >= wins) for X ~ Binomial(wins + losses, 1/2).
inline double sign_test_p(std::size_t wins, std::size_t losses) {
    const std::size_t n = wins + losses;
    if (n == 0) return 1.0;
    double p = 0.0;
    for (std::size_t k = wins; k <= n; ++k)
        p += std::exp(std::lgamma(double(n) + 1) - std::lgamma(double(k) + 1) - std::lgamma(double(n - k) + 1) -
                      double(n) * std::log(2.0));
    return std::min(1.0, p);
}

// ----------------------------------------------------------------- report

struct ModeReport {
    Mode mode = Mode::Autonomous;
    std::size_t trials = 0;
    TimingStats navigation;
    TimingStats puncture;
    perception::MetricsTable metrics;
    double success_rate = 0.0;  // air injection inflated the vein
    std::vector<std::size_t> navigation_outliers;  // trial ids
};

struct BatchReport {
    std::vector<TrialRecord> records;
    std::vector<ModeReport> modes;
    std::string config_digest;
};

inline ModeReport mode_report(Mode mode, const std::vector<TrialRecord>& records) {
    ModeReport m;
    m.mode = mode;
    std::vector<double> nav;
    std::vector<double> punct;
    std::vector<std::size_t> ids;
    std::vector<perception::LabeledSample> samples;
    std::size_t ok = 0;
    for (const auto& r : records) {
        if (r.mode != mode) continue;
        nav.push_back(r.navigation_s);
        punct.push_back(r.puncture_s);
        ids.push_back(r.trial_id);
        samples.push_back({std::to_string(r.trial_id), r.ground_truth ? 1 : 0, r.verdict ? 1 : 0, 1.0});
        ok += r.ground_truth;
    }
    m.trials = nav.size();
    if (m.trials == 0) return m;
    m.navigation = timing_stats(nav);
    m.puncture = timing_stats(punct);
    m.metrics = perception::evaluate_classifier(samples);
    m.success_rate = double(ok) / double(m.trials);
    for (std::size_t i : high_outliers(nav)) m.navigation_outliers.push_back(ids[i]);
    return m;
}

/// Aggregates records; the mode order is autonomous first.
inline BatchReport build_report(std::vector<TrialRecord> records, std::string config_digest) {
    BatchReport b;
    b.records = std::move(records);
    b.config_digest = std::move(config_digest);
    for (Mode m : {Mode::Autonomous, Mode::ScriptedManual}) {
        ModeReport r = mode_report(m, b.records);
        if (r.trials > 0) b.modes.push_back(std::move(r));
    }
    return b;
}

// -------------------------------------------------------------------- CSV

inline constexpr std::string_view records_header =
    "trial_id,mode,seed,navigation_s,puncture_s,attempts,verdict,ground_truth,outcome_class,abort_reason";

inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::string fixed2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline std::string records_csv(const std::vector<TrialRecord>& records) {
    std::ostringstream os;
    os << records_header << '\n';
    for (const auto& r : records) {
        os << r.trial_id << ',' << to_string(r.mode) << ',' << r.seed << ',' << format_double(r.navigation_s) << ','
           << format_double(r.puncture_s) << ',' << r.attempts << ',' << int(r.verdict) << ',' << int(r.ground_truth)
           << ',' << to_string(r.outcome) << ',' << r.abort_reason << '\n';
    }
    return os.str();
}

inline std::vector<TrialRecord> parse_records_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    auto bad = [](const std::string& why) { return Error(ErrorCode::InvalidArgument, "records.csv: " + why); };
    if (!std::getline(in, line) || line != records_header) throw bad("unexpected header");
    std::vector<TrialRecord> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) f.push_back(cell);
        if (line.back() == ',') f.emplace_back();
        if (f.size() != 10) throw bad("line " + std::to_string(lineno) + " has " + std::to_string(f.size()) + " fields");
        try {
            TrialRecord r;
            r.trial_id = std::stoull(f[0]);
            if (f[1] == "auto") r.mode = Mode::Autonomous;
            else if (f[1] == "scripted-manual") r.mode = Mode::ScriptedManual;
            else throw bad("unknown mode '" + f[1] + "'");
            r.seed = std::stoull(f[2]);
            r.navigation_s = std::stod(f[3]);
            r.puncture_s = std::stod(f[4]);
            r.attempts = std::stoi(f[5]);
            r.verdict = f[6] == "1";
            r.ground_truth = f[7] == "1";
            r.outcome = json(f[8]).get<Outcome>();
            if (r.outcome != outcome_class(r.verdict, r.ground_truth))
                throw bad("line " + std::to_string(lineno) + ": outcome_class disagrees with the verdicts");
            r.abort_reason = f[9];
            out.push_back(r);
        } catch (const std::logic_error& e) {
            throw bad("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

inline std::string table_i_csv(const ModeReport& m) {
    std::ostringstream os;
    os << "Metric,Navigation Time (seconds),Puncture Time (seconds)\n";
    os << "Average," << fixed2(m.navigation.mean) << ',' << fixed2(m.puncture.mean) << '\n';
    os << "Median," << fixed2(m.navigation.median) << ',' << fixed2(m.puncture.median) << '\n';
    os << "Standard Deviation," << fixed2(m.navigation.sample_std) << ',' << fixed2(m.puncture.sample_std) << '\n';
    return os.str();
}

inline std::string table_ii_csv(const perception::MetricsTable& t) {
    auto cell = [](double v, bool undefined) { return undefined ? std::string("n/a") : fixed2(v); };
    const auto& c0 = t.classes[0];
    const auto& c1 = t.classes[1];
    std::ostringstream os;
    os << "Metric,Class 0 (Failure),Class 1 (Success)\n";
    os << "Precision," << cell(c0.precision, c0.undefined_precision) << ',' << cell(c1.precision, c1.undefined_precision)
       << '\n';
    os << "Recall," << cell(c0.recall, c0.undefined_recall) << ',' << cell(c1.recall, c1.undefined_recall) << '\n';
    os << "F1-score," << cell(c0.f1, c0.undefined_f1) << ',' << cell(c1.f1, c1.undefined_f1) << '\n';
    os << "Support," << c0.support << ',' << c1.support << '\n';
    return os.str();
}

inline json to_json_stats(const TimingStats& s) {
    return json{{"n", s.n}, {"mean", s.mean}, {"median", s.median}, {"sample_std", s.sample_std}};
}

inline json report_json(const BatchReport& b) {
    json modes = json::object();
    for (const auto& m : b.modes) {
        modes[std::string(to_string(m.mode))] = json{{"trials", m.trials},
                                                     {"navigation_s", to_json_stats(m.navigation)},
                                                     {"puncture_s", to_json_stats(m.puncture)},
                                                     {"metrics", m.metrics},
                                                     {"success_rate", m.success_rate},
                                                     {"navigation_outliers", m.navigation_outliers}};
    }
    return json{{"trials", b.records.size()},
                {"config_digest", b.config_digest},
                {"modes", modes},
                {"records", b.records},
                {"notes",
                 {"puncture time runs from the start of contact seeking to the puncture verdict",
                  "standard deviation uses the n-1 denominator",
                  "navigation outliers (above Q3 + 1.5 IQR) are included in all statistics and listed separately",
                  "scripted-manual is a modeled keyboard operator, not a human measurement"}}};
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    require(static_cast<bool>(out), ErrorCode::InvalidArgument, "cannot write " + p.string());
    out << text;
}

inline std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::InvalidArgument, "cannot read " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Writes records.csv, report.json, tableI.csv and tableII.csv. With both
/// modes present, the unsuffixed tables hold the autonomous run and the
/// scripted-manual tables get a suffix.
inline void write_report(const BatchReport& b, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_text(dir / "records.csv", records_csv(b.records));
    write_text(dir / "report.json", report_json(b).dump(2) + "\n");
    for (std::size_t i = 0; i < b.modes.size(); ++i) {
        const std::string suffix = i == 0 ? "" : "_" + std::string(to_string(b.modes[i].mode));
        write_text(dir / ("tableI" + suffix + ".csv"), table_i_csv(b.modes[i]));
        write_text(dir / ("tableII" + suffix + ".csv"), table_ii_csv(b.modes[i].metrics));
    }
}

/// Regenerates the report files from a records.csv. The config digest is
/// carried over from a report.json next to it when there is one.
inline BatchReport report_from_csv(const std::filesystem::path& records_path) {
    std::vector<TrialRecord> recs = parse_records_csv(read_text(records_path));
    std::string digest;
    const auto rj = records_path.parent_path() / "report.json";
    if (std::filesystem::exists(rj)) {
        try {
            digest = json::parse(read_text(rj)).value("config_digest", std::string{});
        } catch (const json::exception&) {
        }
    }
    return build_report(std::move(recs), digest);
}

// ------------------------------------------------------------------ batch

struct BatchOptions {
    std::size_t trials = 20;
    std::vector<Mode> modes{Mode::Autonomous};
    std::uint64_t master_seed = 1;
    std::optional<std::filesystem::path> log_dir;    // per-trial NDJSON logs
    std::optional<std::filesystem::path> frame_dir;  // per-trial PNG dumps
};

inline std::string config_digest(const std::vector<Scenario>& set, const BatchOptions& opt) {
    json j{{"scenarios", set}, {"trials", opt.trials}, {"modes", opt.modes}, {"master_seed", opt.master_seed}};
    return hex64(fnv1a(j.dump()));
}

/// Trial i uses scenario i mod |set|. Trials run in order; each one owns its
/// world, renderers and log.
inline BatchReport run_batch(const std::vector<Scenario>& set, const BatchOptions& opt) {
    require(opt.trials >= 1, ErrorCode::InvalidArgument, "n_trials must be >= 1");
    require(!set.empty(), ErrorCode::InvalidArgument, "scenario set is empty");
    require(!opt.modes.empty(), ErrorCode::InvalidArgument, "no modes requested");
    std::vector<TrialRecord> records;
    for (std::size_t i = 0; i < opt.trials; ++i) {
        const Scenario& sc = set[i % set.size()];
        const std::uint64_t seed = trial_seed(opt.master_seed, i);
        for (Mode mode : opt.modes) {
            try {
                TrialRunner runner(sc, i, seed, mode);
                const std::string tag = "trial_" + std::to_string(i) + "_" + std::string(to_string(mode));
                if (opt.frame_dir) {
                    const auto dir = *opt.frame_dir / tag;
                    std::filesystem::create_directories(dir);
                    runner.set_frame_sink([dir](long long k, FrameKind kind, const GrayImage& img) {
                        char name[64];
                        std::snprintf(name, sizeof name, "%05lld_%s.png", k,
                                      kind == FrameKind::Microscope ? "microscope" : "bscan");
                        write_png(img, (dir / name).string());
                    });
                }
                records.push_back(runner.run());
                if (opt.log_dir) {
                    std::filesystem::create_directories(*opt.log_dir);
                    std::string text;
                    for (const auto& l : runner.log()) text += l + "\n";
                    write_text(*opt.log_dir / (tag + ".ndjson"), text);
                }
            } catch (const Error& e) {
                throw Error(e.code(), "trial " + std::to_string(i) + " (" + std::string(to_string(mode)) +
                                          "): " + e.what());
            }
        }
    }
    return build_report(std::move(records), config_digest(set, opt));
}

}  // namespace rvc::harness
