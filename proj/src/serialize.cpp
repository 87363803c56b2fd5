#include "pigeon/serialize.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "pigeon/errors.hpp"

namespace pigeon::serialize {

namespace {
constexpr char kB64Table[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int b64_index(char c) {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
}
}  // namespace

std::string base64_encode(const std::uint8_t* data, std::size_t len) {
    std::string out;
    out.reserve((len + 2) / 3 * 4);
    std::size_t i = 0;
    while (i + 3 <= len) {
        std::uint32_t v = (data[i] << 16) | (data[i + 1] << 8) | data[i + 2];
        out.push_back(kB64Table[(v >> 18) & 63]);
        out.push_back(kB64Table[(v >> 12) & 63]);
        out.push_back(kB64Table[(v >> 6) & 63]);
        out.push_back(kB64Table[v & 63]);
        i += 3;
    }
    if (i + 1 == len) {
        std::uint32_t v = data[i] << 16;
        out.push_back(kB64Table[(v >> 18) & 63]);
        out.push_back(kB64Table[(v >> 12) & 63]);
        out.push_back('=');
        out.push_back('=');
    } else if (i + 2 == len) {
        std::uint32_t v = (data[i] << 16) | (data[i + 1] << 8);
        out.push_back(kB64Table[(v >> 18) & 63]);
        out.push_back(kB64Table[(v >> 12) & 63]);
        out.push_back(kB64Table[(v >> 6) & 63]);
        out.push_back('=');
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
    std::vector<std::uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    std::uint32_t acc = 0;
    int bits = 0;
    for (char c : text) {
        if (c == '=' || c == '\n' || c == '\r') continue;
        int v = b64_index(c);
        if (v < 0) throw io_error("invalid base64 character");
        acc = (acc << 6) | static_cast<std::uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xff));
        }
    }
    return out;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(m.size()) * sizeof(double));
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            double v = m(i, j);
            std::memcpy(bytes.data() + k, &v, sizeof(double));
            k += sizeof(double);
        }
    }
    return json{{"rows", m.rows()},
                {"cols", m.cols()},
                {"data", base64_encode(bytes.data(), bytes.size())}};
}

Eigen::MatrixXd matrix_from_json(const json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    auto bytes = base64_decode(j.at("data").get<std::string>());
    if (bytes.size() != static_cast<std::size_t>(rows * cols) * sizeof(double))
        throw io_error("matrix payload size mismatch");
    Eigen::MatrixXd m(rows, cols);
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index jj = 0; jj < cols; ++jj) {
            double v;
            std::memcpy(&v, bytes.data() + k, sizeof(double));
            m(i, jj) = v;
            k += sizeof(double);
        }
    }
    return m;
}

json vector_to_json(const Eigen::VectorXd& v) {
    return matrix_to_json(v.transpose());
}

Eigen::VectorXd vector_from_json(const json& j) {
    Eigen::MatrixXd m = matrix_from_json(j);
    if (m.rows() != 1) throw io_error("expected a single-row vector payload");
    return m.row(0).transpose();
}

std::uint64_t fnv1a(const std::uint8_t* data, std::size_t len, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t fnv1a(const std::string& text, std::uint64_t seed) {
    return fnv1a(reinterpret_cast<const std::uint8_t*>(text.data()), text.size(), seed);
}

std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write " + path);
    out << content;
    if (!out) throw io_error("write failed for " + path);
}

}  // namespace pigeon::serialize
