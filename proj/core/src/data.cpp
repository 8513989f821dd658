#include "gradalign/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "gradalign/rng.hpp"

namespace gradalign {

namespace {

constexpr double kPi = 3.14159265358979323846;

int channels_of(const Shape& s) { return s.size() == 3 ? s[0] : 1; }

}  // namespace

void Dataset::refresh_bounds() {
    if (inputs.empty()) {
        lo.assign(1, 0.0);
        hi.assign(1, 0.0);
        return;
    }
    int C = channels_of(inputs.front().shape());
    lo.assign(static_cast<std::size_t>(C), 1e308);
    hi.assign(static_cast<std::size_t>(C), -1e308);
    for (const auto& x : inputs) {
        std::int64_t per = x.size() / C;
        for (int c = 0; c < C; ++c) {
            for (std::int64_t i = 0; i < per; ++i) {
                double v = x[c * per + i];
                lo[static_cast<std::size_t>(c)] = std::min(lo[static_cast<std::size_t>(c)], v);
                hi[static_cast<std::size_t>(c)] = std::max(hi[static_cast<std::size_t>(c)], v);
            }
        }
    }
}

Dataset make_moons_2d(int n, double noise, std::uint64_t seed) {
    if (n < 2) throw Error("make_moons_2d: need at least two points");
    Dataset ds;
    ds.class_count = 2;
    ds.split = "full";
    Rng rng(seed);
    int n0 = n / 2 + (n % 2);  // class counts differ by at most one
    for (int i = 0; i < n; ++i) {
        bool first = i < n0;
        double t = kPi * rng.uniform();
        double px, py;
        if (first) {
            px = std::cos(t);
            py = std::sin(t);
        } else {
            px = 1.0 - std::cos(t);
            py = 0.5 - std::sin(t);
        }
        px += noise * rng.normal();
        py += noise * rng.normal();
        ds.inputs.push_back(Tensor({2}, {px, py}));
        ds.labels.push_back(first ? 0 : 1);
    }
    ds.refresh_bounds();
    return ds;
}

namespace {

// one glyph stamp per class, drawn into [0,1] intensities
void stamp_glyph(Tensor& img, int side, int cls, int ox, int oy, double ink) {
    auto put = [&](int r, int c) {
        r += oy;
        c += ox;
        if (r >= 0 && r < side && c >= 0 && c < side) {
            double& v = img[static_cast<std::int64_t>(r) * side + c];
            v = std::min(1.0, v + ink);
        }
    };
    const int m = side / 4;       // margin
    const int w = side - 2 * m;   // glyph body
    switch (cls % 10) {
        case 0:  // square outline
            for (int i = 0; i < w; ++i) {
                put(m, m + i);
                put(m + w - 1, m + i);
                put(m + i, m);
                put(m + i, m + w - 1);
            }
            break;
        case 1:  // vertical bar
            for (int i = 0; i < w; ++i) {
                put(m + i, side / 2);
                put(m + i, side / 2 - 1);
            }
            break;
        case 2:  // horizontal bar
            for (int i = 0; i < w; ++i) {
                put(side / 2, m + i);
                put(side / 2 - 1, m + i);
            }
            break;
        case 3:  // main diagonal
            for (int i = 0; i < w; ++i) {
                put(m + i, m + i);
                put(m + i, std::min(side - 1, m + i + 1));
            }
            break;
        case 4:  // anti-diagonal
            for (int i = 0; i < w; ++i) {
                put(m + i, m + w - 1 - i);
                put(m + i, std::max(0, m + w - 2 - i));
            }
            break;
        case 5:  // cross
            for (int i = 0; i < w; ++i) {
                put(side / 2, m + i);
                put(m + i, side / 2);
            }
            break;
        case 6: {  // circle
            double r = w / 2.0 - 0.5, cy = side / 2.0 - 0.5, cx = side / 2.0 - 0.5;
            for (int i = 0; i < side; ++i)
                for (int j = 0; j < side; ++j) {
                    double d = std::sqrt((i - cy) * (i - cy) + (j - cx) * (j - cx));
                    if (std::abs(d - r) < 0.9) put(i, j);
                }
            break;
        }
        case 7:  // filled top-left block
            for (int i = 0; i < w / 2 + 1; ++i)
                for (int j = 0; j < w / 2 + 1; ++j) put(m + i, m + j);
            break;
        case 8:  // filled bottom-right block
            for (int i = 0; i < w / 2 + 1; ++i)
                for (int j = 0; j < w / 2 + 1; ++j) put(m + w / 2 + i - 1, m + w / 2 + j - 1);
            break;
        case 9:  // two vertical bars
            for (int i = 0; i < w; ++i) {
                put(m + i, m + 1);
                put(m + i, m + w - 2);
            }
            break;
    }
}

}  // namespace

Dataset make_synthetic_digits(int n, int classes, int side, std::uint64_t seed) {
    if (side < 8) throw Error("make_synthetic_digits: side must be at least 8");
    if (classes < 2) throw Error("make_synthetic_digits: need at least two classes");
    Dataset ds;
    ds.class_count = classes;
    ds.split = "full";
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        int cls = i % classes;  // balanced by construction
        Tensor img(Shape{1, side, side});
        for (std::int64_t p = 0; p < img.size(); ++p) img[p] = 0.1 * rng.uniform();
        int shift = std::max(1, side / 8);
        int ox = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(2 * shift + 1))) - shift;
        int oy = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(2 * shift + 1))) - shift;
        double ink = 0.75 + 0.2 * rng.uniform();
        stamp_glyph(img, side, cls, ox, oy, ink);
        ds.inputs.push_back(std::move(img));
        ds.labels.push_back(cls);
    }
    ds.refresh_bounds();
    return ds;
}

Dataset load_cifar_binary(const std::string& path, const std::vector<int>& class_subset,
                          int per_class_limit, bool standardize) {
    std::ifstream is(path, std::ios::binary | std::ios::ate);
    if (!is) throw Error("load_cifar_binary: cannot open '" + path + "'");
    const std::int64_t file_size = static_cast<std::int64_t>(is.tellg());
    constexpr std::int64_t kRow = 1 + 3 * 32 * 32;
    if (file_size == 0 || file_size % kRow != 0)
        throw Error("load_cifar_binary: '" + path + "' has " + std::to_string(file_size) +
                    " bytes, not a multiple of the " + std::to_string(kRow) + "-byte row layout");
    const std::int64_t rows = file_size / kRow;
    is.seekg(0);

    std::vector<bool> keep_class(10, class_subset.empty());
    for (int c : class_subset) {
        if (c < 0 || c > 9) throw Error("load_cifar_binary: class " + std::to_string(c) + " out of range");
        keep_class[static_cast<std::size_t>(c)] = true;
    }
    std::vector<int> taken(10, 0);

    Dataset ds;
    ds.class_count = 10;
    ds.split = "full";
    std::vector<unsigned char> row(static_cast<std::size_t>(kRow));
    for (std::int64_t r = 0; r < rows; ++r) {
        is.read(reinterpret_cast<char*>(row.data()), kRow);
        if (!is) throw Error("load_cifar_binary: '" + path + "' truncated at row " + std::to_string(r));
        int label = row[0];
        if (label > 9) throw Error("load_cifar_binary: row " + std::to_string(r) +
                                   " has label " + std::to_string(label));
        if (!keep_class[static_cast<std::size_t>(label)]) continue;
        if (per_class_limit >= 0 && taken[static_cast<std::size_t>(label)] >= per_class_limit)
            continue;
        ++taken[static_cast<std::size_t>(label)];
        Tensor img(Shape{3, 32, 32});
        for (std::int64_t i = 0; i < 3 * 32 * 32; ++i)
            img[i] = static_cast<double>(row[static_cast<std::size_t>(1 + i)]) / 255.0;
        ds.inputs.push_back(std::move(img));
        ds.labels.push_back(label);
    }
    if (standardize && !ds.inputs.empty()) {
        // per-channel standardization over the loaded subset
        for (int c = 0; c < 3; ++c) {
            double mean = 0.0, count = 0.0;
            for (const auto& x : ds.inputs)
                for (std::int64_t i = 0; i < 32 * 32; ++i) {
                    mean += x[c * 1024 + i];
                    count += 1.0;
                }
            mean /= count;
            double var = 0.0;
            for (const auto& x : ds.inputs)
                for (std::int64_t i = 0; i < 32 * 32; ++i) {
                    double d = x[c * 1024 + i] - mean;
                    var += d * d;
                }
            double sd = std::sqrt(var / count);
            if (sd < 1e-12) sd = 1.0;
            for (auto& x : ds.inputs)
                for (std::int64_t i = 0; i < 32 * 32; ++i) x[c * 1024 + i] = (x[c * 1024 + i] - mean) / sd;
        }
    }
    ds.refresh_bounds();
    return ds;
}

void write_binary_dataset(const std::string& path, const Dataset& ds) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("write_binary_dataset: cannot open '" + path + "' for writing");
    for (std::size_t i = 0; i < ds.inputs.size(); ++i) {
        unsigned char label = static_cast<unsigned char>(ds.labels[i]);
        os.write(reinterpret_cast<const char*>(&label), 1);
        const Tensor& x = ds.inputs[i];
        for (std::int64_t p = 0; p < x.size(); ++p) {
            long b = std::lround(std::clamp(x[p], 0.0, 1.0) * 255.0);
            unsigned char byte = static_cast<unsigned char>(b);
            os.write(reinterpret_cast<const char*>(&byte), 1);
        }
    }
    std::ofstream manifest(path + ".manifest.txt");
    manifest << "rows " << ds.inputs.size() << "\n";
    manifest << "classes " << ds.class_count << "\n";
    if (!ds.inputs.empty()) {
        manifest << "shape";
        for (int d : ds.inputs.front().shape()) manifest << " " << d;
        manifest << "\n";
    }
    manifest << "pixel_encoding byte_over_255\n";
}

std::pair<Dataset, Dataset> split_train_test(const Dataset& ds, double test_fraction,
                                             std::uint64_t seed) {
    if (test_fraction < 0.0 || test_fraction > 1.0)
        throw Error("split_train_test: fraction must be in [0,1]");
    std::vector<std::size_t> order(ds.inputs.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    for (std::size_t i = order.size(); i > 1; --i) {
        std::size_t j = rng.uniform_index(i);
        std::swap(order[i - 1], order[j]);
    }
    std::size_t n_test = static_cast<std::size_t>(std::llround(test_fraction * order.size()));
    Dataset train, test;
    train.class_count = test.class_count = ds.class_count;
    train.split = "train";
    test.split = "test";
    for (std::size_t i = 0; i < order.size(); ++i) {
        Dataset& dst = i < n_test ? test : train;
        dst.inputs.push_back(ds.inputs[order[i]].clone());
        dst.labels.push_back(ds.labels[order[i]]);
    }
    train.refresh_bounds();
    test.refresh_bounds();
    return {std::move(train), std::move(test)};
}

}  // namespace gradalign
