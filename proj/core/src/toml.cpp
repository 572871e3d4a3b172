#include "latentvol/toml.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <sstream>
#include <vector>

#include "latentvol/errors.hpp"

namespace latentvol::toml {
namespace {

using nlohmann::json;

class Cursor {
 public:
  Cursor(std::string_view text, int line) : s_(text), line_(line) {}

  void skip_ws() {
    while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
  }
  bool at_end() {
    skip_ws();
    return pos_ >= s_.size() || s_[pos_] == '#';
  }
  [[nodiscard]] char peek() const { return pos_ < s_.size() ? s_[pos_] : '\0'; }
  char take() { return pos_ < s_.size() ? s_[pos_++] : '\0'; }
  void expect(char c) {
    skip_ws();
    if (take() != c) fail(std::string("expected '") + c + "'");
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError("TOML line " + std::to_string(line_) + ": " + what);
  }

  std::string key() {
    skip_ws();
    if (peek() == '"') return basic_string();
    const auto start = pos_;
    while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_' || s_[pos_] == '-')) {
      ++pos_;
    }
    if (pos_ == start) fail("expected a key");
    return std::string(s_.substr(start, pos_ - start));
  }

  std::vector<std::string> dotted_key() {
    std::vector<std::string> parts{key()};
    skip_ws();
    while (peek() == '.') {
      ++pos_;
      parts.push_back(key());
      skip_ws();
    }
    return parts;
  }

  std::string basic_string() {
    if (take() != '"') fail("expected '\"'");
    std::string out;
    for (;;) {
      if (pos_ >= s_.size()) fail("unterminated string");
      const char c = take();
      if (c == '"') return out;
      if (c != '\\') {
        out.push_back(c);
        continue;
      }
      const char e = take();
      switch (e) {
        case '"': out.push_back('"'); break;
        case '\\': out.push_back('\\'); break;
        case 'n': out.push_back('\n'); break;
        case 't': out.push_back('\t'); break;
        case 'r': out.push_back('\r'); break;
        case 'b': out.push_back('\b'); break;
        case 'f': out.push_back('\f'); break;
        case 'u': {
          if (pos_ + 4 > s_.size()) fail("truncated \\u escape");
          unsigned cp = 0;
          const auto r = std::from_chars(s_.data() + pos_, s_.data() + pos_ + 4, cp, 16);
          if (r.ec != std::errc() || r.ptr != s_.data() + pos_ + 4) fail("bad \\u escape");
          pos_ += 4;
          if (cp < 0x80) {
            out.push_back(static_cast<char>(cp));
          } else if (cp < 0x800) {
            out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
          } else {
            out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
          }
          break;
        }
        default: fail(std::string("unsupported escape \\") + e);
      }
    }
  }

  json value() {
    skip_ws();
    const char c = peek();
    if (c == '"') return basic_string();
    if (c == '[') return array();
    const auto start = pos_;
    while (pos_ < s_.size() && s_[pos_] != ',' && s_[pos_] != ']' && s_[pos_] != '#' && s_[pos_] != ' ' &&
           s_[pos_] != '\t') {
      ++pos_;
    }
    return scalar(s_.substr(start, pos_ - start));
  }

  json array() {
    take();
    json out = json::array();
    skip_ws();
    if (peek() == ']') {
      take();
      return out;
    }
    for (;;) {
      out.push_back(value());
      skip_ws();
      const char c = take();
      if (c == ']') return out;
      if (c != ',') fail("expected ',' or ']' in array");
      skip_ws();
      if (peek() == ']') {
        take();
        return out;
      }
    }
  }

  json scalar(std::string_view tok) const {
    if (tok == "true") return true;
    if (tok == "false") return false;
    if (tok.empty()) fail("missing value");
    std::string clean;
    for (std::size_t i = 0; i < tok.size(); ++i) {
      if (tok[i] == '_') {
        if (i == 0 || i + 1 == tok.size() || !std::isdigit(static_cast<unsigned char>(tok[i - 1])) ||
            !std::isdigit(static_cast<unsigned char>(tok[i + 1]))) {
          fail("misplaced '_' in number '" + std::string(tok) + "'");
        }
        continue;
      }
      clean.push_back(tok[i]);
    }
    const char* b = clean.data();
    const char* e = clean.data() + clean.size();
    if (*b == '+') ++b;
    const bool is_float = clean.find_first_of(".eE") != std::string::npos;
    if (!is_float) {
      std::int64_t v = 0;
      const auto r = std::from_chars(b, e, v);
      if (r.ec == std::errc() && r.ptr == e) return v;
    } else {
      double v = 0;
      const auto r = std::from_chars(b, e, v);
      if (r.ec == std::errc() && r.ptr == e) return v;
    }
    fail("invalid value '" + std::string(tok) + "'");
  }

 private:
  std::string_view s_;
  std::size_t pos_ = 0;
  int line_;
};

json& descend(json& root, const std::vector<std::string>& path, int line) {
  json* node = &root;
  for (const auto& part : path) {
    json& child = (*node)[part];
    if (child.is_null()) child = json::object();
    if (!child.is_object()) {
      throw ConfigError("TOML line " + std::to_string(line) + ": '" + part + "' is already a value");
    }
    node = &child;
  }
  return *node;
}

std::string format_key(const std::string& k) {
  const bool bare = !k.empty() && std::all_of(k.begin(), k.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
  });
  return bare ? k : json(k).dump();
}

std::string format_value(const json& v) {
  if (v.is_array()) {
    std::string out = "[";
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) out += ", ";
      if (v[i].is_object() || v[i].is_array()) throw ConfigError("TOML subset arrays hold scalars only");
      out += format_value(v[i]);
    }
    return out + "]";
  }
  if (v.is_null()) throw ConfigError("TOML has no null value");
  return v.dump();
}

void dump_table(const json& table, const std::string& prefix, std::ostringstream& os) {
  bool wrote_any = false;
  for (const auto& [k, v] : table.items()) {
    if (v.is_object()) continue;
    os << format_key(k) << " = " << format_value(v) << '\n';
    wrote_any = true;
  }
  for (const auto& [k, v] : table.items()) {
    if (!v.is_object()) continue;
    const std::string name = prefix.empty() ? format_key(k) : prefix + "." + format_key(k);
    if (wrote_any || os.tellp() > 0) os << '\n';
    os << '[' << name << "]\n";
    wrote_any = false;
    dump_table(v, name, os);
  }
}

}  // namespace

nlohmann::json parse(std::string_view text) {
  json root = json::object();
  json* table = &root;
  int line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++line_no;
    start = end + 1;

    Cursor cur(line, line_no);
    if (cur.at_end()) continue;
    if (cur.peek() == '[') {
      cur.take();
      if (cur.peek() == '[') cur.fail("arrays of tables are not supported");
      const auto path = cur.dotted_key();
      cur.expect(']');
      if (!cur.at_end()) cur.fail("unexpected text after table header");
      table = &descend(root, path, line_no);
      continue;
    }
    auto path = cur.dotted_key();
    cur.expect('=');
    auto value = cur.value();
    if (!cur.at_end()) cur.fail("unexpected text after value");
    const std::string leaf = path.back();
    path.pop_back();
    json& parent = descend(*table, path, line_no);
    if (parent.contains(leaf)) cur.fail("duplicate key '" + leaf + "'");
    parent[leaf] = std::move(value);
  }
  return root;
}

nlohmann::json parse_value(std::string_view text, bool allow_bare) {
  try {
    Cursor cur(text, 1);
    auto v = cur.value();
    if (!cur.at_end()) cur.fail("unexpected trailing text");
    return v;
  } catch (const ConfigError&) {
    if (allow_bare) return std::string(text);
    throw;
  }
}

std::string dump(const nlohmann::json& object) {
  if (!object.is_object()) throw ConfigError("TOML documents must be tables");
  std::ostringstream os;
  dump_table(object, "", os);
  return os.str();
}

}  // namespace latentvol::toml
