#include "calm/io.hpp"

#include <bit>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "calm/errors.hpp"

namespace calm {

std::string format_real(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& text, const char* what) {
    T value{};
    const char* first = text.data();
    const char* last = text.data() + text.size();
    auto res = std::from_chars(first, last, value);
    if (text.empty() || res.ec != std::errc() || res.ptr != last)
        throw ConfigError("malformed " + std::string(what) + " for " + key + ": '" + text + "'");
    return value;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

int parse_int(const std::string& key, const std::string& text) {
    return parse_number<int>(key, text, "integer");
}

std::uint64_t parse_u64(const std::string& key, const std::string& text) {
    return parse_number<std::uint64_t>(key, text, "unsigned integer");
}

double parse_real(const std::string& key, const std::string& text) {
    return parse_number<double>(key, text, "real");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        out.push_back(parse_int(key, item));
    }
    return out;
}

std::string join_ints(const std::vector<int>& values, char sep) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += sep;
        out += std::to_string(values[i]);
    }
    return out;
}

std::map<std::string, std::string> parse_key_values(std::istream& in, const std::string& origin) {
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value, got '" +
                              t + "'");
        kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
    }
    return kv;
}

std::map<std::string, std::string> read_key_value_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("missing file " + path);
    return parse_key_values(in, path);
}

void write_le_doubles(std::ostream& out, const double* values, std::size_t count) {
    std::string buf(count * 8, '\0');
    for (std::size_t i = 0; i < count; ++i) {
        const auto bits = std::bit_cast<std::uint64_t>(values[i]);
        for (int b = 0; b < 8; ++b) buf[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

void read_le_doubles(std::istream& in, double* values, std::size_t count) {
    std::string buf(count * 8, '\0');
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size())) throw IoError("binary payload truncated");
    for (std::size_t i = 0; i < count; ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b)
            bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i * 8 + b])) << (8 * b);
        values[i] = std::bit_cast<double>(bits);
    }
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << content;
    if (!out) throw IoError("write failed for " + path);
}

std::string read_binary_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("missing file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string read_text_file(const std::string& path) { return read_binary_file(path); }

std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace calm
