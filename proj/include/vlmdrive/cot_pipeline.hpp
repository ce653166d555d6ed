#pragma once

// Three-stage chain-of-thought driver: scene description, high-level intent,
// then low-level (speed, curvature) commands.

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

#include "vlmdrive/domain.hpp"
#include "vlmdrive/vlm_client.hpp"

namespace vlmdrive {

class TemplateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PromptTemplates {
  std::string stage1;  // no placeholders
  std::string stage2;  // {scene_description}, {history}
  std::string stage3;  // {scene_description}, {intent}
};

/// The templates shipped in templates/; identical text, compiled in.
PromptTemplates default_templates();

/// Loads three template files and checks each holds exactly its placeholders.
PromptTemplates load_templates(const std::array<std::filesystem::path, kStageCount>& paths);

/// Throws TemplateError naming the stage and the offending placeholder set.
void validate_templates(const PromptTemplates& templates);

/// Names used as "{name}" in the template.
std::set<std::string> placeholders(std::string_view tmpl);

/// Substitutes every "{name}"; unknown names throw TemplateError.
std::string fill_template(std::string_view tmpl, const std::map<std::string, std::string>& values);

/// "[(v1, k1), ..., (v6, k6)]", speeds to 2 decimals, curvatures to 4.
std::string format_history(std::span<const ActionState> history);

struct PipelineOptions {
  std::filesystem::path image_root;  // frame image paths resolve against this
  bool image_all_stages = true;
  int max_output_tokens = 1024;
  std::optional<double> temperature;
  std::optional<std::string> system_text;
};

std::string media_type_for(const std::filesystem::path& path);

/// Runs the three stages for one frame, then parses and integrates the
/// commands. Transport failures and unreadable images are recorded in the
/// result as failed frames; they never throw.
FrameResult run_frame(const Frame& frame, Provider& provider, const PromptTemplates& templates,
                      const PipelineOptions& options = {});

/// True when the result failed for a reason other than the model's output.
bool is_frame_error(const FrameResult& result);

}  // namespace vlmdrive
