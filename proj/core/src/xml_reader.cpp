// SPDX-License-Identifier: Apache-2.0
#include "kpg/xml_reader.hpp"

#include <charconv>

#include "kpg/error.hpp"

namespace kpg {
namespace {

bool is_name_start(int c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_' || c == ':' || c >= 0x80;
}

bool is_name_char(int c) {
  return is_name_start(c) || (c >= '0' && c <= '9') || c == '-' || c == '.';
}

bool is_space(int c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

// Resolves the body of an entity reference (without '&' and ';').
std::optional<std::string> resolve_entity(std::string_view name) {
  if (name == "lt") return "<";
  if (name == "gt") return ">";
  if (name == "amp") return "&";
  if (name == "quot") return "\"";
  if (name == "apos") return "'";
  if (name.size() >= 2 && name[0] == '#') {
    unsigned long cp = 0;
    const bool hex = name[1] == 'x' || name[1] == 'X';
    const char* first = name.data() + (hex ? 2 : 1);
    const char* last = name.data() + name.size();
    auto [ptr, ec] = std::from_chars(first, last, cp, hex ? 16 : 10);
    if (ec != std::errc() || ptr != last || first == last || cp > 0x10FFFF) return std::nullopt;
    std::string out;
    append_utf8(out, static_cast<char32_t>(cp));
    return out;
  }
  return std::nullopt;
}

}  // namespace

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

std::string decode_entities(std::string_view text, bool strict) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] != '&') {
      out += text[i++];
      continue;
    }
    const auto semi = text.find(';', i);
    std::optional<std::string> value;
    if (semi != std::string_view::npos && semi - i <= 12)
      value = resolve_entity(text.substr(i + 1, semi - i - 1));
    if (value) {
      out += *value;
      i = semi + 1;
    } else if (strict) {
      throw Error("unknown entity reference at offset " + std::to_string(i));
    } else {
      out += text[i++];
    }
  }
  return out;
}

const std::string* XmlElement::attribute(std::string_view key) const {
  for (const auto& [k, v] : attributes)
    if (k == key) return &v;
  return nullptr;
}

int XmlReader::peek() { return in_.peek(); }

int XmlReader::get() {
  const int c = in_.get();
  if (c == '\n') {
    ++line_;
    column_ = 0;
  } else if (c != std::char_traits<char>::eof()) {
    ++column_;
  }
  return c;
}

int XmlReader::expect_get(const char* context) {
  const int c = get();
  if (c == std::char_traits<char>::eof()) fail(std::string("unexpected end of file in ") + context);
  return c;
}

void XmlReader::fail(const std::string& what) const {
  throw ParseError(what, line_, column_ == 0 ? 1 : column_);
}

void XmlReader::skip_space() {
  while (is_space(peek())) get();
}

std::string XmlReader::read_name() {
  std::string name;
  if (!is_name_start(peek())) {
    get();
    fail("expected a name");
  }
  while (is_name_char(peek())) name += static_cast<char>(get());
  return name;
}

void XmlReader::read_entity(std::string& out) {
  std::string name;
  while (true) {
    const int c = expect_get("entity reference");
    if (c == ';') break;
    if (name.size() > 10 || is_space(c) || c == '<' || c == '&') fail("malformed entity reference");
    name += static_cast<char>(c);
  }
  auto value = resolve_entity(name);
  if (!value) fail("unknown entity '&" + name + ";'");
  out += *value;
}

std::string XmlReader::read_attribute_value() {
  const int quote = expect_get("attribute");
  if (quote != '"' && quote != '\'') fail("attribute value must be quoted");
  std::string value;
  while (true) {
    const int c = expect_get("attribute value");
    if (c == quote) break;
    if (c == '<') fail("'<' not allowed in attribute value");
    if (c == '&') {
      read_entity(value);
    } else {
      value += static_cast<char>(c);
    }
  }
  return value;
}

void XmlReader::skip_until(std::string_view terminator) {
  std::size_t matched = 0;
  while (matched < terminator.size()) {
    const int c = expect_get("markup");
    if (c == terminator[matched]) {
      ++matched;
    } else {
      matched = c == terminator[0] ? 1 : 0;
    }
  }
}

std::optional<XmlElement> XmlReader::next() {
  while (true) {
    const int c = get();
    if (c == std::char_traits<char>::eof()) {
      if (!open_.empty()) fail("unexpected end of file: element '" + open_.back() + "' not closed");
      if (!seen_root_) fail("document has no root element");
      return std::nullopt;
    }
    if (c == '&') {
      std::string sink;
      read_entity(sink);
      continue;
    }
    if (c != '<') {
      if (open_.empty() && !is_space(c)) fail("text outside the root element");
      continue;
    }
    const std::size_t tag_line = line_;
    const std::size_t tag_column = column_;
    const int d = peek();
    if (d == '?') {
      skip_until("?>");
      continue;
    }
    if (d == '!') {
      get();
      if (peek() == '-') {
        get();
        if (expect_get("comment") != '-') fail("malformed comment");
        skip_until("-->");
      } else if (peek() == '[') {
        skip_until("]]>");
      } else {
        skip_until(">");
      }
      continue;
    }
    if (d == '/') {
      get();
      const auto name = read_name();
      skip_space();
      if (expect_get("end tag") != '>') fail("expected '>' after end tag name");
      if (open_.empty() || open_.back() != name)
        fail("mismatched end tag '</" + name + ">'" +
             (open_.empty() ? std::string() : " (expected '</" + open_.back() + ">')"));
      open_.pop_back();
      continue;
    }

    if (open_.empty() && seen_root_) fail("more than one root element");
    XmlElement el;
    el.line = tag_line;
    el.column = tag_column;
    el.depth = open_.size();
    el.name = read_name();
    bool self_closing = false;
    while (true) {
      const bool had_space = is_space(peek());
      skip_space();
      const int e = peek();
      if (e == '/') {
        get();
        if (expect_get("tag") != '>') fail("expected '>' after '/'");
        self_closing = true;
        break;
      }
      if (e == '>') {
        get();
        break;
      }
      if (e == std::char_traits<char>::eof()) {
        get();
        fail("unexpected end of file in tag");
      }
      if (!had_space) {
        get();
        fail("expected whitespace before attribute");
      }
      auto key = read_name();
      skip_space();
      if (expect_get("attribute") != '=') fail("expected '=' after attribute name");
      skip_space();
      auto value = read_attribute_value();
      for (const auto& [k, v] : el.attributes)
        if (k == key) fail("duplicate attribute '" + key + "'");
      el.attributes.emplace_back(std::move(key), std::move(value));
    }
    seen_root_ = true;
    if (!self_closing) open_.push_back(el.name);
    return el;
  }
}

}  // namespace kpg
