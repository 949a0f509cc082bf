#pragma once

#include <Eigen/Dense>

#include <array>
#include <cassert>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <vector>

namespace stimpute {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using CVecMap = Eigen::Map<const Eigen::VectorXd>;

/// Dense row-major tensor of doubles, rank 1..4. Small value type used for
/// observations, masks, parameters and every intermediate of the predictor.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::initializer_list<int> dims) { resize(std::vector<int>(dims)); }
    explicit Tensor(const std::vector<int>& dims) { resize(dims); }

    static Tensor zeros(std::initializer_list<int> dims) { return Tensor(dims); }
    static Tensor zeros_like(const Tensor& o) {
        Tensor t;
        t.rank_ = o.rank_;
        t.dims_ = o.dims_;
        t.data_.assign(o.data_.size(), 0.0);
        return t;
    }
    static Tensor full(std::initializer_list<int> dims, double v) {
        Tensor t(dims);
        t.fill(v);
        return t;
    }

    void resize(const std::vector<int>& dims) {
        if (dims.empty() || dims.size() > 4) throw std::invalid_argument("tensor rank must be 1..4");
        rank_ = static_cast<int>(dims.size());
        std::size_t n = 1;
        for (std::size_t i = 0; i < dims.size(); ++i) {
            if (dims[i] <= 0) throw std::invalid_argument("tensor dims must be positive");
            dims_[i] = dims[i];
            n *= static_cast<std::size_t>(dims[i]);
        }
        for (std::size_t i = dims.size(); i < 4; ++i) dims_[i] = 1;
        data_.assign(n, 0.0);
    }

    int rank() const { return rank_; }
    int dim(int i) const { return static_cast<int>(dims_[static_cast<std::size_t>(i)]); }
    std::vector<int> shape() const {
        std::vector<int> s(static_cast<std::size_t>(rank_));
        for (int i = 0; i < rank_; ++i) s[static_cast<std::size_t>(i)] = dims_[static_cast<std::size_t>(i)];
        return s;
    }
    bool same_shape(const Tensor& o) const { return rank_ == o.rank_ && dims_ == o.dims_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& operator()(int i) { return data_[static_cast<std::size_t>(i)]; }
    double operator()(int i) const { return data_[static_cast<std::size_t>(i)]; }
    double& operator()(int i, int j) { return data_[idx2(i, j)]; }
    double operator()(int i, int j) const { return data_[idx2(i, j)]; }
    double& operator()(int i, int j, int k) { return data_[idx3(i, j, k)]; }
    double operator()(int i, int j, int k) const { return data_[idx3(i, j, k)]; }
    double& operator()(int i, int j, int k, int l) { return data_[idx4(i, j, k, l)]; }
    double operator()(int i, int j, int k, int l) const { return data_[idx4(i, j, k, l)]; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    /// View the whole storage as a rows x cols row-major matrix.
    MapRM mat(int rows, int cols) {
        assert(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) == data_.size());
        return MapRM(data_.data(), rows, cols);
    }
    CMapRM mat(int rows, int cols) const {
        assert(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) == data_.size());
        return CMapRM(data_.data(), rows, cols);
    }
    VecMap vec() { return VecMap(data_.data(), static_cast<Eigen::Index>(data_.size())); }
    CVecMap vec() const { return CVecMap(data_.data(), static_cast<Eigen::Index>(data_.size())); }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    Tensor reshaped(const std::vector<int>& dims) const {
        Tensor t;
        t.resize(dims);
        if (t.size() != size()) throw std::invalid_argument("reshape changes element count");
        t.data_ = data_;
        return t;
    }

private:
    std::size_t idx2(int i, int j) const {
        return static_cast<std::size_t>(i) * dims_[1] + static_cast<std::size_t>(j);
    }
    std::size_t idx3(int i, int j, int k) const {
        return (static_cast<std::size_t>(i) * dims_[1] + static_cast<std::size_t>(j)) * dims_[2] +
               static_cast<std::size_t>(k);
    }
    std::size_t idx4(int i, int j, int k, int l) const {
        return ((static_cast<std::size_t>(i) * dims_[1] + static_cast<std::size_t>(j)) * dims_[2] +
                static_cast<std::size_t>(k)) *
                   dims_[3] +
               static_cast<std::size_t>(l);
    }

    int rank_ = 0;
    std::array<std::size_t, 4> dims_{1, 1, 1, 1};
    std::vector<double> data_;
};

}  // namespace stimpute
