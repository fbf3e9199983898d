#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "steerloop/numerics.hpp"

namespace steerloop {

/// Token layout (ids are dense from 0):
///   [0, modes)            MODE_k       -- names one mixture mode
///   modes                 NULL         -- carries no preference
///   [modes+1, ..)         AMBIG_i_j    -- names two allowed modes (adjacent pairs)
///   tail                  STYLE_s      -- reserved, no semantics attached
struct Vocabulary {
  int modes = 0;
  int ambig = 0;
  int style = 0;

  Vocabulary() = default;
  Vocabulary(int n_modes, bool with_ambig = true, int n_style = 0);

  int size() const { return modes + 1 + ambig + style; }
  int mode_token(int k) const;
  int null_token() const { return modes; }
  int ambig_token(int idx) const;

  bool is_mode(int id) const { return id >= 0 && id < modes; }
  bool is_ambig(int id) const { return id > modes && id <= modes + ambig; }
  bool valid(int id) const { return id >= 0 && id < size(); }

  /// The two modes an AMBIG token allows.
  std::pair<int, int> ambig_modes(int token) const;

  std::string token_name(int id) const;
  int parse_token(std::string_view name) const;
};

/// Fixed-length token sequence. Conditioning and actions are both prompts;
/// a Query is the user-supplied starting prompt.
struct Prompt {
  std::vector<int32_t> ids;

  bool operator==(const Prompt&) const = default;
  int length() const { return static_cast<int>(ids.size()); }
};

using Query = Prompt;

/// Mean of the token embedding rows: order-invariant conditioning vector.
Vec embed_prompt(const Prompt& prompt, const Mat& embeddings);

/// Number of non-NULL tokens.
int prompt_length(const Prompt& prompt, const Vocabulary& vocab);

std::string format_prompt(const Prompt& prompt, const Vocabulary& vocab);
Prompt parse_prompt(std::string_view text, const Vocabulary& vocab);

/// [MODE_k, NULL, ..., NULL] -- the terse user-style query.
Query mode_query(const Vocabulary& vocab, int k, int length);
/// [AMBIG_idx, NULL, ..., NULL]
Query ambig_query(const Vocabulary& vocab, int ambig_idx, int length);
/// [MODE_k, MODE_k, ..., MODE_k] -- full-strength conditioning on one mode.
Prompt full_mode_prompt(const Vocabulary& vocab, int k, int length);

}  // namespace steerloop
