#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace calm {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

// Shortest-exact is not used: reals are always written with 17 significant
// digits in the C locale.
std::string format_real(double v);

int parse_int(const std::string& key, const std::string& text);
std::uint64_t parse_u64(const std::string& key, const std::string& text);
double parse_real(const std::string& key, const std::string& text);
std::vector<int> parse_int_list(const std::string& key, const std::string& text);
std::string join_ints(const std::vector<int>& values, char sep);

// key=value lines; '#' starts a comment line; blank lines ignored.
// Duplicate keys: last one wins.
std::map<std::string, std::string> parse_key_values(std::istream& in, const std::string& origin);
std::map<std::string, std::string> read_key_value_file(const std::string& path);

void write_le_doubles(std::ostream& out, const double* values, std::size_t count);
void read_le_doubles(std::istream& in, double* values, std::size_t count);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);
std::string read_binary_file(const std::string& path);

// FNV-1a 64 as 16 hex digits.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace calm
