// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace kpg {

struct XmlElement {
  std::string name;
  std::vector<std::pair<std::string, std::string>> attributes;  // entity-decoded
  std::size_t line = 0;
  std::size_t column = 0;
  std::size_t depth = 0;  // 0 for the document element

  const std::string* attribute(std::string_view key) const;
};

/// Streaming pull reader for attribute-centric XML such as the StackExchange
/// dumps. Yields start (and empty-element) tags in document order; text,
/// comments, processing instructions and DOCTYPE are skipped. Well-formedness
/// violations raise ParseError with the line and column of the offending
/// character.
class XmlReader {
 public:
  explicit XmlReader(std::istream& in) : in_(in) {}

  std::optional<XmlElement> next();

 private:
  int peek();
  int get();
  int expect_get(const char* context);
  [[noreturn]] void fail(const std::string& what) const;
  void skip_space();
  std::string read_name();
  std::string read_attribute_value();
  void read_entity(std::string& out);
  void skip_until(std::string_view terminator);

  std::istream& in_;
  std::size_t line_ = 1;
  std::size_t column_ = 0;
  std::vector<std::string> open_;
  bool seen_root_ = false;
};

/// Decodes the five predefined XML entities and numeric character references
/// in `text`. Unknown entities are kept verbatim when `strict` is false.
std::string decode_entities(std::string_view text, bool strict = true);

/// Appends the UTF-8 encoding of `code_point`.
void append_utf8(std::string& out, char32_t code_point);

}  // namespace kpg
