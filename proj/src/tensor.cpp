#include "advdiff/tensor.hpp"

#include "advdiff/error.hpp"

namespace advdiff {

std::string to_string(const Shape& s) {
    return "[" + std::to_string(s.n) + "," + std::to_string(s.c) + "," + std::to_string(s.h) + "," +
           std::to_string(s.w) + "]";
}

double mean_squared_error(const Images& a, const Images& b) {
    if (!a.same_shape(b)) throw ShapeMismatch("mse: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    if (a.empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a.values()[i] - b.values()[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

}  // namespace advdiff
