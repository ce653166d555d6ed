#pragma once

// Recovery of six (speed, curvature) commands from free-form model output.
//
// The strict grammar accepts exactly one bracketed list of six "(v, k)" pairs
// with optional surrounding whitespace. When it fails, the correction pass
// pulls every numeric literal out of the text and, if there are exactly
// twelve, reads them as v1, k1, ..., v6, k6.

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "vlmdrive/domain.hpp"

namespace vlmdrive {

struct ParseOutcome {
  ParseStatus status = ParseStatus::kFailed;
  std::optional<std::vector<ActionState>> actions;
  std::optional<ErrorClass> error_class;
};

/// Every numeric literal in reading order: optional sign, digits with an
/// optional fraction ("1." and ".5" included), optional exponent.
std::vector<double> extract_numeric_literals(std::string_view text);

ParseOutcome parse_strict(std::string_view text);

/// Twelve-literal fallback. Meant to run only after parse_strict failed; the
/// label on a corrected outcome is the classifier's view of the text.
ParseOutcome parse_corrected(std::string_view text);

/// Label for a text that failed to parse. Priority: non-numeric, wrong-count,
/// missing-delimiters, extra-text, out-of-range.
ErrorClass classify_error(std::string_view text);

/// Strict first, then correction. A corrected outcome carries the strict
/// failure's label; a failed one carries the correction failure's label.
ParseOutcome parse_actions(std::string_view text);

}  // namespace vlmdrive
