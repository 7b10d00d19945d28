#include "traceadapt/core/canonical.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <vector>

namespace traceadapt {

namespace {

using nlohmann::json;

bool valid_utf8(const std::string& s) {
  std::size_t i = 0;
  const auto n = s.size();
  while (i < n) {
    auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    char32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + len > n) return false;
    for (std::size_t k = 1; k < len; ++k) {
      auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // Overlong forms, surrogates, out of range.
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000) ||
        cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
      return false;
    }
    i += len;
  }
  return true;
}

void write_string(const std::string& s, std::string& out) {
  if (!valid_utf8(s)) throw CanonicalizationError("string is not valid UTF-8");
  out.push_back('"');
  for (char ch : s) {
    auto c = static_cast<unsigned char>(ch);
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\b': out += "\\b"; break;
      case '\f': out += "\\f"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (c < 0x20) {
          static constexpr char kHex[] = "0123456789abcdef";
          out += "\\u00";
          out.push_back(kHex[c >> 4]);
          out.push_back(kHex[c & 0xF]);
        } else {
          out.push_back(ch);
        }
    }
  }
  out.push_back('"');
}

template <typename T>
void write_integer(T v, std::string& out) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, end);
}

void write_float(double d, std::string& out) {
  if (!std::isfinite(d)) throw CanonicalizationError("non-finite number is not representable");
  if (d == std::trunc(d)) {
    // 2^63 and 2^64 are exact doubles.
    if (d >= -9223372036854775808.0 && d < 9223372036854775808.0) {
      write_integer(static_cast<std::int64_t>(d), out);
      return;
    }
    if (d > 0 && d < 18446744073709551616.0) {
      write_integer(static_cast<std::uint64_t>(d), out);
      return;
    }
  }
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, d);
  out.append(buf, end);
}

void write_value(const json& v, std::string& out) {
  switch (v.type()) {
    case json::value_t::null: out += "null"; break;
    case json::value_t::boolean: out += v.get<bool>() ? "true" : "false"; break;
    case json::value_t::number_integer: write_integer(v.get<std::int64_t>(), out); break;
    case json::value_t::number_unsigned: write_integer(v.get<std::uint64_t>(), out); break;
    case json::value_t::number_float: write_float(v.get<double>(), out); break;
    case json::value_t::string: write_string(v.get_ref<const std::string&>(), out); break;
    case json::value_t::array: {
      out.push_back('[');
      bool first = true;
      for (const auto& el : v) {
        if (!first) out.push_back(',');
        first = false;
        write_value(el, out);
      }
      out.push_back(']');
      break;
    }
    case json::value_t::object: {
      // nlohmann's default object is a std::map, already byte-ordered, but sort
      // explicitly so the contract does not hinge on the container choice.
      std::vector<const json::object_t::value_type*> members;
      members.reserve(v.size());
      for (const auto& kv : v.get_ref<const json::object_t&>()) members.push_back(&kv);
      std::sort(members.begin(), members.end(),
                [](auto* a, auto* b) { return a->first < b->first; });
      out.push_back('{');
      bool first = true;
      for (const auto* kv : members) {
        if (!first) out.push_back(',');
        first = false;
        write_string(kv->first, out);
        out.push_back(':');
        write_value(kv->second, out);
      }
      out.push_back('}');
      break;
    }
    case json::value_t::binary:
    case json::value_t::discarded:
      throw CanonicalizationError("binary or discarded values are not representable");
  }
}

}  // namespace

std::string canonicalize(const nlohmann::json& value) {
  std::string out;
  write_value(value, out);
  return out;
}

}  // namespace traceadapt
