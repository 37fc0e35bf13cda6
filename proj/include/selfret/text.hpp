#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace selfret {

/// Metric tokenization: ASCII lowercase, punctuation removed, whitespace
/// split. "A dog's ball." -> {"a", "dogs", "ball"}.
std::vector<std::string> tokenize(std::string_view text);

/// Plain whitespace split, case and punctuation untouched.
std::vector<std::string> split_words(std::string_view text);

/// Word and punctuation pieces: "a dog, running." -> {a, dog, ",", running, "."}.
std::vector<std::string> split_word_pieces(std::string_view text);

std::string join(const std::vector<std::string>& tokens, std::string_view sep = " ");

}  // namespace selfret
