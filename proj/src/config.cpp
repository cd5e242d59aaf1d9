#include "hdi/config.hpp"

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace hdi {

namespace {

struct Cursor {
  const std::string& text;
  int line;
  size_t pos = 0;

  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError(msg, line, static_cast<int>(pos) + 1);
  }
  void skip_ws() {
    while (pos < text.size() && (text[pos] == ' ' || text[pos] == '\t')) ++pos;
  }
  bool done() const { return pos >= text.size(); }
  char peek() const { return pos < text.size() ? text[pos] : '\0'; }
};

Config::Value scalar_value(Cursor& c) {
  Config::Value v;
  c.skip_ws();
  if (c.done()) c.fail("expected a value");
  char ch = c.peek();
  if (ch == '"') {
    ++c.pos;
    size_t begin = c.pos;
    while (!c.done() && c.peek() != '"') ++c.pos;
    if (c.done()) c.fail("unterminated string");
    v.kind = Config::Value::string;
    v.str = c.text.substr(begin, c.pos - begin);
    ++c.pos;
    return v;
  }
  if (std::isalpha(static_cast<unsigned char>(ch))) {
    size_t begin = c.pos;
    while (!c.done() && std::isalpha(static_cast<unsigned char>(c.peek()))) ++c.pos;
    std::string word = c.text.substr(begin, c.pos - begin);
    if (word == "true" || word == "false") {
      v.kind = Config::Value::boolean;
      v.flag = (word == "true");
      return v;
    }
    c.pos = begin;
    c.fail("bare word '" + word + "' (strings must be quoted)");
  }
  const char* start = c.text.c_str() + c.pos;
  char* end = nullptr;
  double num = std::strtod(start, &end);
  if (end == start) c.fail("expected number, string, or boolean");
  c.pos += end - start;
  v.kind = Config::Value::number;
  v.num = num;
  return v;
}

Config::Value parse_value(Cursor& c) {
  c.skip_ws();
  if (c.peek() != '[') return scalar_value(c);
  ++c.pos;
  Config::Value out;
  out.kind = Config::Value::number_list;
  bool first = true;
  for (;;) {
    c.skip_ws();
    if (c.peek() == ']') { ++c.pos; break; }
    if (!first && !c.done() && c.peek() == ',') { ++c.pos; c.skip_ws(); }
    else if (!first) c.fail("expected ',' or ']'");
    if (c.peek() == ']') { ++c.pos; break; }  // trailing comma
    Config::Value item = scalar_value(c);
    if (item.kind == Config::Value::number) {
      if (!out.strs.empty()) c.fail("mixed array types");
      out.nums.push_back(item.num);
    } else if (item.kind == Config::Value::string) {
      if (!out.nums.empty()) c.fail("mixed array types");
      out.kind = Config::Value::string_list;
      out.strs.push_back(item.str);
    } else {
      c.fail("arrays hold numbers or strings");
    }
    first = false;
  }
  return out;
}

}  // namespace

Config Config::parse_string(const std::string& text, const std::string& name) {
  Config cfg;
  cfg.source_ = text;
  cfg.name_ = name;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    // strip comments outside quotes
    std::string line;
    bool quoted = false;
    for (char ch : raw) {
      if (ch == '"') quoted = !quoted;
      if (ch == '#' && !quoted) break;
      line += ch;
    }
    Cursor c{line, lineno};
    c.skip_ws();
    if (c.done()) continue;
    if (c.peek() == '[') {
      size_t close = line.find(']', c.pos);
      if (close == std::string::npos) c.fail("unterminated section header");
      section = line.substr(c.pos + 1, close - c.pos - 1);
      c.pos = close + 1;
      c.skip_ws();
      if (!c.done()) c.fail("trailing input after section header");
      continue;
    }
    size_t begin = c.pos;
    while (!c.done() && (std::isalnum(static_cast<unsigned char>(c.peek())) ||
                         c.peek() == '_' || c.peek() == '.'))
      ++c.pos;
    if (c.pos == begin) c.fail("expected key");
    std::string key = line.substr(begin, c.pos - begin);
    c.skip_ws();
    if (c.peek() != '=') c.fail("expected '=' after key '" + key + "'");
    ++c.pos;
    Value v = parse_value(c);
    c.skip_ws();
    if (!c.done()) c.fail("trailing input after value");
    if (cfg.sections_[section].count(key))
      throw ConfigError("duplicate key '" + key + "'", lineno, 1);
    cfg.sections_[section][key] = std::move(v);
  }
  return cfg;
}

Config Config::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'", 0, 0);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_string(buf.str(), path);
}

bool Config::has(const std::string& section, const std::string& key) const {
  auto s = sections_.find(section);
  return s != sections_.end() && s->second.count(key) > 0;
}

const Config::Value& Config::require(const std::string& section, const std::string& key) const {
  auto s = sections_.find(section);
  if (s == sections_.end() || !s->second.count(key))
    throw ConfigError("missing key [" + section + "] " + key, 0, 0);
  return s->second.at(key);
}

double Config::number(const std::string& section, const std::string& key) const {
  const Value& v = require(section, key);
  if (v.kind != Value::number)
    throw ConfigError("key [" + section + "] " + key + " is not a number", 0, 0);
  return v.num;
}

double Config::number_or(const std::string& section, const std::string& key,
                         double fallback) const {
  return has(section, key) ? number(section, key) : fallback;
}

int Config::integer(const std::string& section, const std::string& key) const {
  double v = number(section, key);
  int i = static_cast<int>(v);
  if (i != v) throw ConfigError("key [" + section + "] " + key + " is not an integer", 0, 0);
  return i;
}

int Config::integer_or(const std::string& section, const std::string& key, int fallback) const {
  return has(section, key) ? integer(section, key) : fallback;
}

std::string Config::str(const std::string& section, const std::string& key) const {
  const Value& v = require(section, key);
  if (v.kind != Value::string)
    throw ConfigError("key [" + section + "] " + key + " is not a string", 0, 0);
  return v.str;
}

std::string Config::str_or(const std::string& section, const std::string& key,
                           const std::string& fallback) const {
  return has(section, key) ? str(section, key) : fallback;
}

std::vector<double> Config::numbers(const std::string& section, const std::string& key) const {
  const Value& v = require(section, key);
  if (v.kind == Value::number) return {v.num};
  if (v.kind != Value::number_list)
    throw ConfigError("key [" + section + "] " + key + " is not a number array", 0, 0);
  return v.nums;
}

std::vector<std::string> Config::strings(const std::string& section,
                                         const std::string& key) const {
  const Value& v = require(section, key);
  if (v.kind == Value::string) return {v.str};
  if (v.kind != Value::string_list && !(v.kind == Value::number_list && v.nums.empty()))
    throw ConfigError("key [" + section + "] " + key + " is not a string array", 0, 0);
  return v.strs;
}

std::string digest_hex(const std::string& data) {
  uint64_t h = 14695981039346656037ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string format_g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace hdi
