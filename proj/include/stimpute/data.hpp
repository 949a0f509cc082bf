#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "stimpute/tensor.hpp"

namespace stimpute {

/// One fixed-length slice of the series: values plus which cells were observed.
struct Window {
    Tensor values;    // N x L, normalized units; unobserved cells hold 0
    Tensor observed;  // N x L, 1 = sensor reported a value
    std::vector<std::string> node_ids;
    std::vector<long long> timestamps;  // epoch seconds, strictly increasing

    int nodes() const { return values.dim(0); }
    int steps() const { return values.dim(1); }
};

struct Adjacency {
    Tensor weights;  // N x N, nonnegative, unit diagonal
};

struct NormStats {
    std::vector<double> mean;  // per node
    std::vector<double> std;   // per node, > 0
};

struct Coord {
    std::string id;
    double x = 0.0;
    double y = 0.0;
};

struct DataConfig {
    int window_length = 24;
    int train_stride = 0;          // 0 -> window_length / 2
    int eval_stride = 0;           // 0 -> window_length
    double train_fraction = 0.8;   // leading fraction of rows used for training
    std::string missing_token;     // extra sentinel besides the empty cell
    double kernel_width = 0.0;     // 0 -> std of pairwise distances
    double threshold = 0.1;
};

struct Dataset {
    std::vector<Window> train_windows;
    std::vector<Window> eval_windows;
    Adjacency adjacency;
    NormStats stats;
    std::vector<std::string> node_ids;
    int period_minutes = 0;
};

// ---------------------------------------------------------------------------
// timestamps

namespace detail {

inline long long days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const long long era = (y >= 0 ? y : y - 399) / 400;
    const int yoe = static_cast<int>(y - era * 400);
    const int doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const int doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + doe - 719468;
}

}  // namespace detail

/// Parses "YYYY-MM-DD HH:MM[:SS]" (space or 'T' separator) to epoch seconds.
inline long long parse_timestamp(const std::string& s) {
    int y = 0, mo = 0, d = 0, h = 0, mi = 0, se = 0;
    char sep = 0;
    const int n = std::sscanf(s.c_str(), "%d-%d-%d%c%d:%d:%d", &y, &mo, &d, &sep, &h, &mi, &se);
    if (n < 6 || (sep != ' ' && sep != 'T'))
        throw std::invalid_argument("unparseable timestamp: " + s);
    return detail::days_from_civil(y, mo, d) * 86400LL + h * 3600LL + mi * 60LL + se;
}

inline std::string format_timestamp(long long t) {
    long long days = t / 86400;
    long long rem = t % 86400;
    if (rem < 0) {
        rem += 86400;
        --days;
    }
    // civil_from_days, inverse of the conversion above
    const long long z = days + 719468;
    const long long era = (z >= 0 ? z : z - 146096) / 146097;
    const long long doe = z - era * 146097;
    const long long yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const long long y = yoe + era * 400;
    const long long doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const long long mp = (5 * doy + 2) / 153;
    const long long d = doy - (153 * mp + 2) / 5 + 1;
    const long long m = mp + (mp < 10 ? 3 : -9);
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%04lld-%02lld-%02lld %02lld:%02lld:%02lld", y + (m <= 2),
                  m, d, rem / 3600, (rem % 3600) / 60, rem % 60);
    return buf;
}

// ---------------------------------------------------------------------------
// adjacency

inline double default_kernel_width(const std::vector<Coord>& coords) {
    const std::size_t n = coords.size();
    std::vector<double> dists;
    dists.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = coords[i].x - coords[j].x;
            const double dy = coords[i].y - coords[j].y;
            dists.push_back(std::sqrt(dx * dx + dy * dy));
        }
    if (dists.empty()) return 1.0;
    double mu = 0.0;
    for (double d : dists) mu += d;
    mu /= static_cast<double>(dists.size());
    double var = 0.0;
    for (double d : dists) var += (d - mu) * (d - mu);
    var /= static_cast<double>(dists.size());
    const double sd = std::sqrt(var);
    return sd > 0.0 ? sd : 1.0;
}

/// Thresholded Gaussian kernel on Euclidean distances; unit diagonal.
inline Adjacency build_adjacency(const std::vector<Coord>& coords, double kernel_width,
                                 double threshold) {
    if (kernel_width <= 0.0) throw std::invalid_argument("kernel_width must be positive");
    if (threshold < 0.0 || threshold >= 1.0) throw std::invalid_argument("threshold must be in [0,1)");
    const int n = static_cast<int>(coords.size());
    for (const auto& c : coords)
        if (!std::isfinite(c.x) || !std::isfinite(c.y))
            throw std::invalid_argument("non-finite coordinate for node " + c.id);
    Adjacency adj;
    adj.weights = Tensor::zeros({n, n});
    for (int i = 0; i < n; ++i) {
        adj.weights(i, i) = 1.0;
        for (int j = i + 1; j < n; ++j) {
            const double dx = coords[static_cast<std::size_t>(i)].x - coords[static_cast<std::size_t>(j)].x;
            const double dy = coords[static_cast<std::size_t>(i)].y - coords[static_cast<std::size_t>(j)].y;
            const double w = std::exp(-(dx * dx + dy * dy) / (kernel_width * kernel_width));
            const double kept = w >= threshold ? w : 0.0;
            adj.weights(i, j) = kept;
            adj.weights(j, i) = kept;
        }
    }
    return adj;
}

// ---------------------------------------------------------------------------
// normalization

/// Per-node z-score statistics over observed entries of the given rows.
/// Degenerate nodes (no spread or no data) get std 1, and no data means mean 0.
inline NormStats compute_stats(const Tensor& values, const Tensor& observed, int row_begin,
                               int row_end) {
    const int n = values.dim(0);
    NormStats s;
    s.mean.assign(static_cast<std::size_t>(n), 0.0);
    s.std.assign(static_cast<std::size_t>(n), 1.0);
    for (int i = 0; i < n; ++i) {
        double sum = 0.0;
        long cnt = 0;
        for (int l = row_begin; l < row_end; ++l)
            if (observed(i, l) != 0.0) {
                sum += values(i, l);
                ++cnt;
            }
        if (cnt == 0) continue;
        const double mu = sum / static_cast<double>(cnt);
        double var = 0.0;
        for (int l = row_begin; l < row_end; ++l)
            if (observed(i, l) != 0.0) var += (values(i, l) - mu) * (values(i, l) - mu);
        var /= static_cast<double>(cnt);
        s.mean[static_cast<std::size_t>(i)] = mu;
        s.std[static_cast<std::size_t>(i)] = var > 1e-24 ? std::sqrt(var) : 1.0;
    }
    return s;
}

inline Tensor normalize(const Tensor& raw, const Tensor& observed, const NormStats& s) {
    Tensor out = Tensor::zeros_like(raw);
    const int n = raw.dim(0), l = raw.dim(1);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < l; ++j)
            if (observed(i, j) != 0.0)
                out(i, j) = (raw(i, j) - s.mean[static_cast<std::size_t>(i)]) /
                            s.std[static_cast<std::size_t>(i)];
    return out;
}

/// Exact inverse of the per-node z-score, applied to every cell.
inline Tensor denormalize(const Tensor& values, const NormStats& s) {
    if (values.rank() != 2 || values.dim(0) != static_cast<int>(s.mean.size()))
        throw std::invalid_argument("denormalize: shape mismatch with stats");
    Tensor out = values;
    const int n = values.dim(0), l = values.dim(1);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < l; ++j)
            out(i, j) = values(i, j) * s.std[static_cast<std::size_t>(i)] +
                        s.mean[static_cast<std::size_t>(i)];
    return out;
}

// ---------------------------------------------------------------------------
// windowing

/// Cuts [row_begin, row_end) into windows of length L at the given stride.
inline std::vector<Window> cut_windows(const Tensor& values, const Tensor& observed,
                                       const std::vector<std::string>& ids,
                                       const std::vector<long long>& ts, int row_begin,
                                       int row_end, int length, int stride) {
    std::vector<Window> out;
    const int n = values.dim(0);
    for (int start = row_begin; start + length <= row_end; start += stride) {
        Window w;
        w.values = Tensor::zeros({n, length});
        w.observed = Tensor::zeros({n, length});
        w.node_ids = ids;
        w.timestamps.assign(ts.begin() + start, ts.begin() + start + length);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < length; ++j) {
                w.values(i, j) = values(i, start + j);
                w.observed(i, j) = observed(i, start + j);
            }
        out.push_back(std::move(w));
    }
    return out;
}

// ---------------------------------------------------------------------------
// file ingestion

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace detail

/// node_id,x,y per line; a header row starting with a non-numeric second field
/// is skipped.
inline std::vector<Coord> load_coords(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open coordinates file: " + path);
    std::vector<Coord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        auto cells = detail::split_csv(line);
        if (cells.size() != 3) throw std::runtime_error("bad coordinates line: " + line);
        char* end = nullptr;
        const double x = std::strtod(cells[1].c_str(), &end);
        if (end == cells[1].c_str()) {
            if (out.empty()) continue;  // header
            throw std::runtime_error("bad coordinate value: " + cells[1]);
        }
        out.push_back({cells[0], x, std::strtod(cells[2].c_str(), nullptr)});
    }
    if (out.empty()) throw std::runtime_error("no coordinates in " + path);
    return out;
}

/// Reads the columnar series (header of node ids, first column timestamp),
/// builds the adjacency from coordinates, z-scores per node on the training
/// rows, and cuts train/eval windows.
inline Dataset load_series(const std::string& series_path, const std::string& coords_path,
                           const DataConfig& cfg) {
    std::ifstream in(series_path);
    if (!in) throw std::runtime_error("cannot open series file: " + series_path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty series file: " + series_path);
    auto header = detail::split_csv(line);
    if (header.size() < 2) throw std::runtime_error("series header needs at least one node column");
    std::vector<std::string> ids(header.begin() + 1, header.end());
    const int n = static_cast<int>(ids.size());

    std::vector<long long> ts;
    std::vector<std::vector<double>> rows;    // time-major
    std::vector<std::vector<double>> obsrows;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        auto cells = detail::split_csv(line);
        if (static_cast<int>(cells.size()) != n + 1)
            throw std::runtime_error("series row has wrong cell count: " + line);
        ts.push_back(parse_timestamp(cells[0]));
        std::vector<double> vals(static_cast<std::size_t>(n), 0.0);
        std::vector<double> obs(static_cast<std::size_t>(n), 0.0);
        for (int i = 0; i < n; ++i) {
            const std::string& c = cells[static_cast<std::size_t>(i) + 1];
            if (c.empty() || (!cfg.missing_token.empty() && c == cfg.missing_token)) continue;
            char* end = nullptr;
            const double v = std::strtod(c.c_str(), &end);
            if (end == c.c_str()) throw std::runtime_error("bad numeric cell: " + c);
            vals[static_cast<std::size_t>(i)] = v;
            obs[static_cast<std::size_t>(i)] = 1.0;
        }
        rows.push_back(std::move(vals));
        obsrows.push_back(std::move(obs));
    }
    const int steps = static_cast<int>(rows.size());
    if (steps < 2) throw std::runtime_error("series needs at least two rows");
    for (int l = 1; l < steps; ++l)
        if (ts[static_cast<std::size_t>(l)] <= ts[static_cast<std::size_t>(l - 1)])
            throw std::runtime_error("timestamps not strictly increasing");
    const long long step0 = ts[1] - ts[0];
    for (int l = 1; l < steps; ++l)
        if (ts[static_cast<std::size_t>(l)] - ts[static_cast<std::size_t>(l - 1)] != step0)
            throw std::runtime_error("timestamps not equally spaced");

    auto coords = load_coords(coords_path);
    if (static_cast<int>(coords.size()) != n)
        throw std::runtime_error("node count differs between series and coordinates");
    std::unordered_map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < coords.size(); ++i) by_id[coords[i].id] = i;
    std::vector<Coord> ordered;
    for (const auto& id : ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw std::runtime_error("no coordinates for node " + id);
        ordered.push_back(coords[it->second]);
    }

    // node-major matrices
    Tensor values = Tensor::zeros({n, steps});
    Tensor observed = Tensor::zeros({n, steps});
    for (int l = 0; l < steps; ++l)
        for (int i = 0; i < n; ++i) {
            values(i, l) = rows[static_cast<std::size_t>(l)][static_cast<std::size_t>(i)];
            observed(i, l) = obsrows[static_cast<std::size_t>(l)][static_cast<std::size_t>(i)];
        }

    Dataset ds;
    ds.node_ids = ids;
    ds.period_minutes = static_cast<int>(step0 / 60);
    const double kw = cfg.kernel_width > 0.0 ? cfg.kernel_width : default_kernel_width(ordered);
    ds.adjacency = build_adjacency(ordered, kw, cfg.threshold);

    const int L = cfg.window_length;
    const int split = static_cast<int>(std::floor(cfg.train_fraction * steps));
    if (split < L) throw std::runtime_error("empty training split: too few rows before the split");
    ds.stats = compute_stats(values, observed, 0, split);
    Tensor norm = normalize(values, observed, ds.stats);

    const int tstride = cfg.train_stride > 0 ? cfg.train_stride : std::max(1, L / 2);
    const int estride = cfg.eval_stride > 0 ? cfg.eval_stride : L;
    ds.train_windows = cut_windows(norm, observed, ids, ts, 0, split, L, tstride);
    ds.eval_windows = cut_windows(norm, observed, ids, ts, split, steps, L, estride);
    if (ds.train_windows.empty()) throw std::runtime_error("empty training split");
    return ds;
}

}  // namespace stimpute
