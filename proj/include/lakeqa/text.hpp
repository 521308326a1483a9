#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace lakeqa {

/// Placeholder written over masked titles and headers.
inline constexpr std::string_view kMask = "MASK";

std::string to_lower(std::string_view s);
std::string_view trim(std::string_view s);

/// ASCII case-fold plus whitespace trim; the normalization used for join keys and
/// value containment.
std::string casefold_trim(std::string_view s);

/// Lower-cased alphanumeric runs. Underscores, hyphens and punctuation split tokens.
std::vector<std::string> word_tokens(std::string_view s);

/// Light normalization for lexical matching: lower-case and strip a plural "s".
std::string lexical_key(std::string_view token);

/// Function words that carry no table-relevance signal.
bool is_stopword(std::string_view lower_token);

/// word_tokens() minus stopwords, pure numbers and the MASK placeholder.
std::vector<std::string> content_tokens(std::string_view s);

/// Numeric literals appearing in free text, in canonical form.
std::vector<std::string> numeric_literals(std::string_view s);

std::uint64_t fnv1a64(std::string_view s);
std::uint64_t mix64(std::uint64_t x);
std::string hex64(std::uint64_t v);

/// Locale-free parse of a whole cell as a finite number ("." decimal separator).
std::optional<double> parse_number(std::string_view s);

/// Canonical number rendering: shortest round-trip form, integers without a
/// fractional part, no trailing zeros.
std::string format_number(double v);

/// Join with a separator.
std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// Levenshtein distance extended with adjacent transpositions (optimal string
/// alignment), over bytes.
std::size_t edit_distance(std::string_view a, std::string_view b);

}  // namespace lakeqa
