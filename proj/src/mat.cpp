#include "pclip/mat.hpp"

#include <cmath>
#include <cstring>

namespace pclip {

Mat transpose(const Mat& m) {
    Mat out(m.cols, m.rows);
    for (int r = 0; r < m.rows; ++r)
        for (int c = 0; c < m.cols; ++c)
            out.at(c, r) = m.at(r, c);
    return out;
}

uint64_t Rng::next_u64() {
    // splitmix64 seeding of an xorshift-style stream keeps the generator
    // self-contained; sequence is identical on every platform.
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
}

int Rng::uniform_int(int lo, int hi) {
    return lo + static_cast<int>(next_u64() % static_cast<uint64_t>(hi - lo + 1));
}

Mat random_normal(Rng& rng, int rows, int cols, double scale) {
    Mat m(rows, cols);
    for (auto& x : m.a) x = rng.normal() * scale;
    return m;
}

uint64_t fnv1a64(const void* data, size_t len, uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

uint64_t fnv1a64(const std::string& s) {
    return fnv1a64(s.data(), s.size());
}

static void feed_le_doubles(const Mat& m, uint64_t& h) {
    for (double x : m.a) {
        uint64_t bits;
        std::memcpy(&bits, &x, sizeof(bits));
        unsigned char le[8];
        for (int i = 0; i < 8; ++i) le[i] = static_cast<unsigned char>(bits >> (8 * i));
        h = fnv1a64(le, 8, h);
    }
}

std::string hex_digest(const std::vector<const Mat*>& mats) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const Mat* m : mats) feed_le_doubles(*m, h);
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

std::string hex_digest(const Mat& m) {
    return hex_digest(std::vector<const Mat*>{&m});
}

std::string hex_digest_of_string(const std::string& s) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(s)));
    return std::string(buf);
}

bool all_finite(const Mat& m) {
    for (double x : m.a)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace pclip
