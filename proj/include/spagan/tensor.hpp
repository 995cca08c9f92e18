#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace spagan {

/// Raised when tensor geometries do not line up.
class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

template <typename Scalar>
using Planes = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Grid = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Channels-first single image (batch size is always one). Row c of `data`
/// holds plane c flattened row-major, so `data(c, h * width + w)`.
template <typename Scalar>
struct Tensor {
    int channels = 0;
    int height = 0;
    int width = 0;
    Planes<Scalar> data;

    Tensor() = default;
    Tensor(int c, int h, int w) : channels(c), height(h), width(w), data(Planes<Scalar>::Zero(c, h * w)) {}
    Tensor(int c, int h, int w, Planes<Scalar> values)
        : channels(c), height(h), width(w), data(std::move(values)) {
        if (data.rows() != c || data.cols() != h * w) {
            throw ShapeError("tensor data does not match declared shape");
        }
    }

    static Tensor constant(int c, int h, int w, Scalar value) {
        return Tensor(c, h, w, Planes<Scalar>::Constant(c, h * w, value));
    }

    Scalar& operator()(int c, int h, int w) { return data(c, h * width + w); }
    Scalar operator()(int c, int h, int w) const { return data(c, h * width + w); }

    Eigen::Map<Grid<Scalar>> plane(int c) { return {data.row(c).data(), height, width}; }
    Eigen::Map<const Grid<Scalar>> plane(int c) const { return {data.row(c).data(), height, width}; }

    bool sameShape(const Tensor& other) const {
        return channels == other.channels && height == other.height && width == other.width;
    }

    Eigen::Index size() const { return data.size(); }

    bool allFinite() const { return data.allFinite(); }

    template <typename Other>
    Tensor<Other> cast() const {
        return Tensor<Other>(channels, height, width, data.template cast<Other>());
    }

    std::string shapeString() const {
        return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
    }
};

template <typename Scalar>
using ImageTensor = Tensor<Scalar>;

/// Feature planes captured from a named network layer.
template <typename Scalar>
struct ActivationStack {
    Tensor<Scalar> planes;
    std::string layerName;

    int planeCount() const { return planes.channels; }
};

template <typename Scalar>
inline void requireSameShape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* what) {
    if (!a.sameShape(b)) {
        throw ShapeError(std::string(what) + ": shape mismatch " + a.shapeString() + " vs " + b.shapeString());
    }
}

/// Horizontal mirror of every plane.
template <typename Scalar>
Tensor<Scalar> flipHorizontal(const Tensor<Scalar>& x) {
    Tensor<Scalar> out(x.channels, x.height, x.width);
    for (int c = 0; c < x.channels; ++c) {
        out.plane(c) = x.plane(c).rowwise().reverse();
    }
    return out;
}

} // namespace spagan
