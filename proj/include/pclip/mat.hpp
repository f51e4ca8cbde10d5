#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pclip {

// Dense row-major matrix of doubles. All model math runs at 64-bit;
// persisted artifacts are converted to 32-bit floats at the store boundary.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}

    double& at(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }

    size_t size() const { return a.size(); }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

Mat transpose(const Mat& m);

// Deterministic RNG. mt19937_64 has a fully specified sequence; the
// distributions below are hand-rolled so results do not depend on the
// standard library implementation.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}

    uint64_t next_u64();
    double uniform();                    // [0, 1)
    double normal();                     // standard normal, Box-Muller
    int uniform_int(int lo, int hi);     // inclusive bounds
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = next_u64() % i;
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

Mat random_normal(Rng& rng, int rows, int cols, double scale);

// FNV-1a over raw bytes; used for parameter digests and config digests.
uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ULL);
uint64_t fnv1a64(const std::string& s);

// Digest of a matrix list: little-endian doubles in row-major order.
std::string hex_digest(const std::vector<const Mat*>& mats);
std::string hex_digest(const Mat& m);
std::string hex_digest_of_string(const std::string& s);

bool all_finite(const Mat& m);

}  // namespace pclip
