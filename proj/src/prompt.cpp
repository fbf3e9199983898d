#include "steerloop/prompt.hpp"

#include <algorithm>
#include <sstream>

#include "steerloop/errors.hpp"

namespace steerloop {

Vocabulary::Vocabulary(int n_modes, bool with_ambig, int n_style) {
  if (n_modes < 1) throw ConfigError("Vocabulary: need at least one mode");
  modes = n_modes;
  ambig = with_ambig ? (n_modes >= 3 ? n_modes : (n_modes == 2 ? 1 : 0)) : 0;
  style = n_style;
}

int Vocabulary::mode_token(int k) const {
  if (k < 0 || k >= modes) throw UsageError("Vocabulary: mode index out of range");
  return k;
}

int Vocabulary::ambig_token(int idx) const {
  if (idx < 0 || idx >= ambig) throw UsageError("Vocabulary: ambiguous index out of range");
  return modes + 1 + idx;
}

std::pair<int, int> Vocabulary::ambig_modes(int token) const {
  if (!is_ambig(token)) throw UsageError("Vocabulary: not an ambiguous token");
  const int i = token - (modes + 1);
  return {i, (i + 1) % modes};
}

std::string Vocabulary::token_name(int id) const {
  if (!valid(id)) throw UsageError("Vocabulary: invalid token id");
  if (is_mode(id)) return "MODE_" + std::to_string(id);
  if (id == modes) return "NULL";
  if (is_ambig(id)) {
    const auto [i, j] = ambig_modes(id);
    return "AMBIG_" + std::to_string(i) + "_" + std::to_string(j);
  }
  return "STYLE_" + std::to_string(id - modes - 1 - ambig);
}

int Vocabulary::parse_token(std::string_view name) const {
  for (int id = 0; id < size(); ++id)
    if (token_name(id) == name) return id;
  throw UsageError("Vocabulary: unknown token '" + std::string(name) + "'");
}

Vec embed_prompt(const Prompt& prompt, const Mat& embeddings) {
  if (prompt.ids.empty()) throw UsageError("embed_prompt: empty prompt");
  // Accumulate in sorted token order so the mean is bit-identical across
  // permutations of the same multiset.
  std::vector<int32_t> sorted = prompt.ids;
  std::sort(sorted.begin(), sorted.end());
  Vec out(embeddings.cols, 0.0);
  for (int32_t id : sorted) {
    if (id < 0 || id >= embeddings.rows) throw UsageError("embed_prompt: token id out of range");
    auto row = embeddings.row(id);
    for (int c = 0; c < embeddings.cols; ++c) out[c] += row[c];
  }
  const double inv = 1.0 / static_cast<double>(prompt.ids.size());
  for (double& x : out) x *= inv;
  return out;
}

int prompt_length(const Prompt& prompt, const Vocabulary& vocab) {
  int n = 0;
  for (int32_t id : prompt.ids)
    if (id != vocab.null_token()) ++n;
  return n;
}

std::string format_prompt(const Prompt& prompt, const Vocabulary& vocab) {
  std::string out;
  for (size_t i = 0; i < prompt.ids.size(); ++i) {
    if (i) out += ' ';
    out += vocab.token_name(prompt.ids[i]);
  }
  return out;
}

Prompt parse_prompt(std::string_view text, const Vocabulary& vocab) {
  Prompt p;
  std::istringstream ss{std::string(text)};
  std::string tok;
  while (ss >> tok) p.ids.push_back(vocab.parse_token(tok));
  if (p.ids.empty()) throw UsageError("parse_prompt: empty prompt text");
  return p;
}

Query mode_query(const Vocabulary& vocab, int k, int length) {
  Query q;
  q.ids.assign(length, vocab.null_token());
  q.ids[0] = vocab.mode_token(k);
  return q;
}

Query ambig_query(const Vocabulary& vocab, int ambig_idx, int length) {
  Query q;
  q.ids.assign(length, vocab.null_token());
  q.ids[0] = vocab.ambig_token(ambig_idx);
  return q;
}

Prompt full_mode_prompt(const Vocabulary& vocab, int k, int length) {
  Prompt p;
  p.ids.assign(length, vocab.mode_token(k));
  return p;
}

}  // namespace steerloop
