#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace advdiff {

/// Storage with a fixed base alignment. Vectorized reductions start at the
/// first aligned element, so an allocation-dependent alignment would change
/// float summation order between otherwise identical runs.
template <typename T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::size_t numel() const { return static_cast<std::size_t>(n) * c * h * w; }
    std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }
    friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

/// Dense NCHW tensor with contiguous row-major storage.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    Tensor(int n, int c, int h, int w, T fill = T{})
        : shape_{n, c, h, w}, data_(Shape{n, c, h, w}.numel(), fill) {
        if (n < 0 || c < 0 || h < 0 || w < 0) throw std::invalid_argument("negative tensor dimension");
    }
    explicit Tensor(Shape s, T fill = T{}) : Tensor(s.n, s.c, s.h, s.w, fill) {}

    const Shape& shape() const { return shape_; }
    int n() const { return shape_.n; }
    int c() const { return shape_.c; }
    int h() const { return shape_.h; }
    int w() const { return shape_.w; }
    std::size_t size() const { return data_.size(); }
    std::size_t sample_size() const { return shape_.sample_size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    Buffer<T>& values() { return data_; }
    const Buffer<T>& values() const { return data_; }

    std::span<T> sample(int i) { return {data_.data() + i * sample_size(), sample_size()}; }
    std::span<const T> sample(int i) const { return {data_.data() + i * sample_size(), sample_size()}; }

    T& operator()(int b, int ch, int y, int x) {
        return data_[((static_cast<std::size_t>(b) * shape_.c + ch) * shape_.h + y) * shape_.w + x];
    }
    const T& operator()(int b, int ch, int y, int x) const {
        return data_[((static_cast<std::size_t>(b) * shape_.c + ch) * shape_.h + y) * shape_.w + x];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_{};
    Buffer<T> data_;
};

/// Images are stored in double precision so that l-inf projections are exact;
/// networks convert to their own scalar type at the boundary.
using Images = Tensor<double>;

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& src) {
    Tensor<To> out(src.shape());
    std::transform(src.values().begin(), src.values().end(), out.values().begin(),
                   [](From v) { return static_cast<To>(v); });
    return out;
}

/// Copies samples [begin, begin+count) into a new tensor.
template <typename T>
Tensor<T> slice_samples(const Tensor<T>& src, int begin, int count) {
    if (begin < 0 || count < 0 || begin + count > src.n()) throw std::out_of_range("slice_samples");
    Tensor<T> out(count, src.c(), src.h(), src.w());
    std::copy_n(src.data() + begin * src.sample_size(), count * src.sample_size(), out.data());
    return out;
}

template <typename T>
Tensor<T> gather_samples(const Tensor<T>& src, std::span<const std::size_t> idx) {
    Tensor<T> out(static_cast<int>(idx.size()), src.c(), src.h(), src.w());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= static_cast<std::size_t>(src.n())) throw std::out_of_range("gather_samples");
        auto s = src.sample(static_cast<int>(idx[i]));
        std::copy(s.begin(), s.end(), out.sample(static_cast<int>(i)).begin());
    }
    return out;
}

template <typename T>
void write_samples(Tensor<T>& dst, int begin, const Tensor<T>& src) {
    if (src.sample_size() != dst.sample_size() || begin + src.n() > dst.n())
        throw std::out_of_range("write_samples");
    std::copy(src.values().begin(), src.values().end(), dst.data() + begin * dst.sample_size());
}

double mean_squared_error(const Images& a, const Images& b);

}  // namespace advdiff
