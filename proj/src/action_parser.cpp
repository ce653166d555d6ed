#include "vlmdrive/action_parser.hpp"

#include <cctype>
#include <charconv>
#include <limits>
#include <string>
#include <utility>

namespace vlmdrive {

namespace {

using Pair = std::pair<double, double>;

bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }
bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

// Length of the numeric literal starting at `pos`, or 0 if there is none.
std::size_t match_number(std::string_view s, std::size_t pos) {
  std::size_t i = pos;
  if (i < s.size() && (s[i] == '+' || s[i] == '-')) ++i;
  std::size_t int_digits = 0;
  while (i < s.size() && is_digit(s[i])) ++i, ++int_digits;
  std::size_t frac_digits = 0;
  if (i < s.size() && s[i] == '.') {
    std::size_t j = i + 1;
    while (j < s.size() && is_digit(s[j])) ++j, ++frac_digits;
    if (int_digits > 0 || frac_digits > 0) i = j;
  }
  if (int_digits == 0 && frac_digits == 0) return 0;
  if (i < s.size() && (s[i] == 'e' || s[i] == 'E')) {
    std::size_t j = i + 1;
    if (j < s.size() && (s[j] == '+' || s[j] == '-')) ++j;
    const std::size_t exp_start = j;
    while (j < s.size() && is_digit(s[j])) ++j;
    if (j > exp_start) i = j;
  }
  return i - pos;
}

double to_double(std::string_view literal) {
  if (!literal.empty() && literal.front() == '+') literal.remove_prefix(1);
  double value = 0.0;
  const auto result = std::from_chars(literal.data(), literal.data() + literal.size(), value);
  if (result.ec == std::errc::result_out_of_range) {
    // Overflow becomes infinity so the bounds check rejects it; underflow is zero.
    const bool negative = literal.front() == '-';
    const auto e = literal.find_first_of("eE");
    const bool underflow = e != std::string_view::npos && e + 1 < literal.size() && literal[e + 1] == '-';
    if (underflow) return negative ? -0.0 : 0.0;
    return negative ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
  }
  return value;
}

class Cursor {
 public:
  Cursor(std::string_view s, std::size_t pos) : s_(s), pos_(pos) {}

  void skip_space() {
    while (pos_ < s_.size() && is_space(s_[pos_])) ++pos_;
  }
  bool eat(char c) {
    skip_space();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  std::optional<double> number() {
    skip_space();
    const std::size_t n = match_number(s_, pos_);
    if (n == 0) return std::nullopt;
    const double v = to_double(s_.substr(pos_, n));
    pos_ += n;
    return v;
  }
  std::size_t pos() const { return pos_; }

 private:
  std::string_view s_;
  std::size_t pos_;
};

struct ListMatch {
  std::size_t end = 0;
  std::vector<Pair> pairs;
};

// "[" pair ("," pair)* "]" starting exactly at `pos`.
std::optional<ListMatch> match_list(std::string_view s, std::size_t pos) {
  Cursor c(s, pos);
  if (!c.eat('[')) return std::nullopt;
  ListMatch m;
  do {
    if (!c.eat('(')) return std::nullopt;
    const auto v = c.number();
    if (!v || !c.eat(',')) return std::nullopt;
    const auto k = c.number();
    if (!k || !c.eat(')')) return std::nullopt;
    m.pairs.emplace_back(*v, *k);
  } while (c.eat(','));
  if (!c.eat(']')) return std::nullopt;
  m.end = c.pos();
  return m;
}

// The whole text (modulo surrounding whitespace) as one list.
std::optional<ListMatch> match_whole(std::string_view s) {
  std::size_t start = 0;
  while (start < s.size() && is_space(s[start])) ++start;
  auto m = match_list(s, start);
  if (!m) return std::nullopt;
  std::size_t end = m->end;
  while (end < s.size() && is_space(s[end])) ++end;
  if (end != s.size()) return std::nullopt;
  return m;
}

bool contains_list(std::string_view s) {
  for (std::size_t i = s.find('['); i != std::string_view::npos; i = s.find('[', i + 1)) {
    if (match_list(s, i)) return true;
  }
  return false;
}

std::optional<std::vector<ActionState>> to_actions(const std::vector<double>& interleaved) {
  std::vector<ActionState> actions;
  actions.reserve(interleaved.size() / 2);
  for (std::size_t i = 0; i + 1 < interleaved.size(); i += 2) {
    const ActionState a{interleaved[i], interleaved[i + 1]};
    if (!is_valid_action(a)) return std::nullopt;
    actions.push_back(a);
  }
  return actions;
}

ParseOutcome failure(ErrorClass error) { return {ParseStatus::kFailed, std::nullopt, error}; }

constexpr std::size_t kLiteralCount = 2 * kHorizonSteps;

}  // namespace

std::vector<double> extract_numeric_literals(std::string_view text) {
  std::vector<double> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const std::size_t n = match_number(text, i);
    if (n == 0) {
      ++i;
      continue;
    }
    out.push_back(to_double(text.substr(i, n)));
    i += n;
  }
  return out;
}

ErrorClass classify_error(std::string_view text) {
  const auto literals = extract_numeric_literals(text);
  if (literals.empty()) return ErrorClass::kNonNumeric;
  if (literals.size() != kLiteralCount) return ErrorClass::kWrongCount;
  if (!contains_list(text)) return ErrorClass::kMissingDelimiters;
  if (!match_whole(text)) return ErrorClass::kExtraText;
  return ErrorClass::kOutOfRange;
}

ParseOutcome parse_strict(std::string_view text) {
  const auto m = match_whole(text);
  if (!m) return failure(classify_error(text));
  if (m->pairs.size() != kHorizonSteps) return failure(ErrorClass::kWrongCount);
  std::vector<double> flat;
  for (const auto& [v, k] : m->pairs) {
    flat.push_back(v);
    flat.push_back(k);
  }
  auto actions = to_actions(flat);
  if (!actions) return failure(ErrorClass::kOutOfRange);
  return {ParseStatus::kStrict, std::move(actions), std::nullopt};
}

ParseOutcome parse_corrected(std::string_view text) {
  const auto literals = extract_numeric_literals(text);
  if (literals.size() != kLiteralCount) return failure(classify_error(text));
  auto actions = to_actions(literals);
  if (!actions) return failure(ErrorClass::kOutOfRange);
  return {ParseStatus::kCorrected, std::move(actions), classify_error(text)};
}

ParseOutcome parse_actions(std::string_view text) {
  auto strict = parse_strict(text);
  if (strict.status == ParseStatus::kStrict) return strict;
  auto corrected = parse_corrected(text);
  if (corrected.status == ParseStatus::kCorrected) corrected.error_class = strict.error_class;
  return corrected;
}

}  // namespace vlmdrive
