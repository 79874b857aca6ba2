#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "vlab/error.hpp"
#include "vlab/io/csv.hpp"
#include "vlab/numerics/linalg.hpp"
#include "vlab/numerics/random.hpp"

namespace vlab {

/// Inputs with one-hot targets. labels[j] is the class of row j.
struct Dataset {
    Matrix inputs;   ///< n x p
    Matrix targets;  ///< n x k, one-hot
    std::vector<int> labels;
    int classes = 0;

    std::size_t size() const noexcept { return inputs.rows(); }
    std::size_t input_dim() const noexcept { return inputs.cols(); }
};

inline Matrix one_hot(const std::vector<int>& labels, int classes) {
    Matrix t(labels.size(), static_cast<std::size_t>(classes));
    for (std::size_t j = 0; j < labels.size(); ++j) t(j, static_cast<std::size_t>(labels[j])) = 1.0;
    return t;
}

/// Gaussian blobs with unit within-class variance. Class c has mean
/// (separation / sqrt 2) e_c, so every pair of class means is `separation` apart.
/// Row j belongs to class j mod classes.
inline Dataset synth_dataset(int classes, int per_class, std::size_t input_dim, double separation,
                             RandomStream& stream) {
    if (classes < 2) throw ContractError("synth_dataset: need at least two classes");
    if (per_class < 1) throw ContractError("synth_dataset: per_class must be positive");
    if (input_dim < static_cast<std::size_t>(classes))
        throw ContractError("synth_dataset: input_dim must be at least the class count");
    const std::size_t n = static_cast<std::size_t>(classes) * static_cast<std::size_t>(per_class);
    Dataset ds;
    ds.classes = classes;
    ds.inputs = Matrix(n, input_dim);
    ds.labels.resize(n);
    const double offset = separation / std::sqrt(2.0);
    for (std::size_t j = 0; j < n; ++j) {
        const int c = static_cast<int>(j % static_cast<std::size_t>(classes));
        ds.labels[j] = c;
        for (std::size_t f = 0; f < input_dim; ++f) ds.inputs(j, f) = stream.normal();
        ds.inputs(j, static_cast<std::size_t>(c)) += offset;
    }
    ds.targets = one_hot(ds.labels, classes);
    return ds;
}

struct CsvLoadResult {
    Dataset dataset;
    std::vector<std::string> class_names;
    std::vector<std::string> warnings;
};

namespace detail {

inline bool parse_number(const std::string& s, double& out) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    if (b == e) return false;
    const char* first = s.data() + b;
    if (*first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, s.data() + e, out);
    return ec == std::errc() && ptr == s.data() + e && std::isfinite(out);
}

}  // namespace detail

/// Reads a rectangular numeric CSV with a mandatory header row. The column named
/// `label_column` holds class labels (any text); every other column must be
/// numeric. Features are standardized per column; constant columns become zeros
/// and produce a warning.
inline CsvLoadResult load_csv_dataset(const std::string& path, const std::string& label_column) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open dataset file '" + path + "'", 0);
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        header = csv::split_record(line, line_no);
        break;
    }
    if (header.empty()) throw ParseError("dataset file is empty", line_no);
    {
        double tmp;
        const bool all_numeric =
            std::all_of(header.begin(), header.end(), [&](const std::string& f) { return detail::parse_number(f, tmp); });
        if (all_numeric) throw ParseError("missing header row (first row is numeric)", line_no);
    }
    const auto label_it = std::find(header.begin(), header.end(), label_column);
    if (label_it == header.end()) throw ParseError("unknown label column '" + label_column + "'", line_no);
    const std::size_t label_idx = static_cast<std::size_t>(label_it - header.begin());
    const std::size_t p = header.size() - 1;

    std::vector<std::vector<double>> rows;
    std::vector<std::string> raw_labels;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto fields = csv::split_record(line, line_no);
        if (fields.size() != header.size())
            throw ParseError("expected " + std::to_string(header.size()) + " fields, found " +
                                 std::to_string(fields.size()),
                             line_no);
        std::vector<double> row;
        row.reserve(p);
        for (std::size_t f = 0; f < fields.size(); ++f) {
            if (f == label_idx) continue;
            double v;
            if (!detail::parse_number(fields[f], v))
                throw ParseError("non-numeric value '" + fields[f] + "' in column '" + header[f] + "'", line_no);
            row.push_back(v);
        }
        rows.push_back(std::move(row));
        raw_labels.push_back(fields[label_idx]);
    }
    if (rows.empty()) throw ParseError("dataset has no data rows", line_no);

    // Label order: numeric ascending when every label parses as a number, else lexicographic.
    std::vector<std::string> names = raw_labels;
    std::sort(names.begin(), names.end());
    names.erase(std::unique(names.begin(), names.end()), names.end());
    double tmp;
    if (std::all_of(names.begin(), names.end(), [&](const std::string& s) { return detail::parse_number(s, tmp); })) {
        std::sort(names.begin(), names.end(), [](const std::string& a, const std::string& b) {
            double x, y;
            detail::parse_number(a, x);
            detail::parse_number(b, y);
            return x < y;
        });
    }
    std::map<std::string, int> index;
    for (std::size_t c = 0; c < names.size(); ++c) index[names[c]] = static_cast<int>(c);

    CsvLoadResult out;
    out.class_names = names;
    auto& ds = out.dataset;
    ds.classes = static_cast<int>(names.size());
    ds.inputs = Matrix(rows.size(), p);
    ds.labels.resize(rows.size());
    for (std::size_t j = 0; j < rows.size(); ++j) {
        ds.labels[j] = index[raw_labels[j]];
        for (std::size_t f = 0; f < p; ++f) ds.inputs(j, f) = rows[j][f];
    }
    ds.targets = one_hot(ds.labels, ds.classes);

    std::vector<std::string> feature_names;
    for (std::size_t f = 0; f < header.size(); ++f)
        if (f != label_idx) feature_names.push_back(header[f]);
    const double n = static_cast<double>(rows.size());
    for (std::size_t f = 0; f < p; ++f) {
        double mean = 0.0;
        for (std::size_t j = 0; j < rows.size(); ++j) mean += ds.inputs(j, f);
        mean /= n;
        double var = 0.0;
        for (std::size_t j = 0; j < rows.size(); ++j) var += std::pow(ds.inputs(j, f) - mean, 2);
        var /= n;
        const double sd = std::sqrt(var);
        if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
            out.warnings.push_back("column '" + feature_names[f] + "' has zero variance; standardized to zeros");
            for (std::size_t j = 0; j < rows.size(); ++j) ds.inputs(j, f) = 0.0;
            continue;
        }
        for (std::size_t j = 0; j < rows.size(); ++j) ds.inputs(j, f) = (ds.inputs(j, f) - mean) / sd;
    }
    return out;
}

/// Epoch-wise shuffled partition of [0, n) into batches; the last short batch is kept.
/// Epoch e is shuffled with stream.child(e).
class BatchSchedule {
public:
    BatchSchedule(std::size_t n, std::size_t batch_size, RandomStream stream)
        : n_(n), batch_size_(batch_size == 0 ? n : std::min(batch_size, n)), stream_(std::move(stream)) {
        if (n == 0) throw ContractError("BatchSchedule: empty dataset");
    }

    std::size_t batches_per_epoch() const noexcept { return (n_ + batch_size_ - 1) / batch_size_; }

    /// Indices of batch `b` in epoch `epoch`.
    std::vector<std::size_t> batch(std::size_t epoch, std::size_t b) {
        if (epoch != cached_epoch_) {
            order_.resize(n_);
            std::iota(order_.begin(), order_.end(), std::size_t{0});
            if (batch_size_ < n_) {
                RandomStream s = stream_.child(epoch);
                for (std::size_t i = n_ - 1; i > 0; --i) std::swap(order_[i], order_[s.uniform_index(i + 1)]);
            }
            cached_epoch_ = epoch;
        }
        const std::size_t begin = b * batch_size_;
        const std::size_t end = std::min(n_, begin + batch_size_);
        return {order_.begin() + static_cast<std::ptrdiff_t>(begin), order_.begin() + static_cast<std::ptrdiff_t>(end)};
    }

    /// Batch for global step t (epoch = t / batches_per_epoch).
    std::vector<std::size_t> at_step(std::size_t t) {
        return batch(t / batches_per_epoch(), t % batches_per_epoch());
    }

private:
    std::size_t n_;
    std::size_t batch_size_;
    RandomStream stream_;
    std::size_t cached_epoch_ = static_cast<std::size_t>(-1);
    std::vector<std::size_t> order_;
};

}  // namespace vlab
