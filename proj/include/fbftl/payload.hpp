#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fbftl/errors.hpp"
#include "fbftl/model_split.hpp"

namespace fbftl {

enum class Method { fl, ftl_f, ftl_c, fbftl };

const char* to_string(Method m);
Method parse_method(const std::string& name);

// Everything the closed-form uplink / downlink totals depend on. Batch counts
// are per method: for the three gradient-sharing methods a batch is one
// client-round (rounds x clients-per-round), for the feature-sharing method a
// batch is one uploaded sample (sum of client sample counts).
struct PayloadInputs {
  int bit_width = 32;
  std::uint64_t batches_fl = 0;
  std::uint64_t batches_ftl_f = 0;
  std::uint64_t batches_ftl_c = 0;
  std::uint64_t batches_fbftl = 0;
  std::uint64_t params_full = 0;      // sum of trainable parameters, all layers
  std::uint64_t params_head = 0;      // sum from the cut layer onward
  std::uint64_t feature_dim = 0;      // width of the layer feeding the cut
  std::uint64_t head_out_dim = 0;     // width of the cut layer itself
  std::uint64_t clients_per_round = 0;

  void validate() const;
};

// Fills the architecture-derived fields; batch counts still come from the caller.
PayloadInputs payload_inputs_from_arch(const ArchitectureSpec& arch,
                                       std::uint64_t clients_per_round = 0);

// Parameters a single batch carries upstream.
std::uint64_t params_per_batch(Method m, const PayloadInputs& in);

// Total uplink / downlink bits. Exact integer arithmetic; throws
// numeric_error if a total would exceed 64 bits.
std::uint64_t uplink_total(Method m, const PayloadInputs& in);
std::uint64_t downlink_total(Method m, const PayloadInputs& in);

struct OrderingCheck {
  bool fbftl_far_below = false;   // 100 x fbftl total below every gradient-sharing total
  bool ftl_f_below_fl = false;
  bool ftl_c_below_ftl_f = false; // holds when the methods run equally many batches
  bool ok() const { return fbftl_far_below && ftl_f_below_fl; }
};

OrderingCheck ordering_check(const PayloadInputs& in);

// Per-upload saving of feature sharing over head-gradient sharing:
// params_head / feature_dim > head_out_dim must hold.
bool ratio_bound_check(const PayloadInputs& in);

// Human formatting, decimal SI: b, Kb, Mb, Gb, Tb (capped at Tb). One decimal
// above 1000 b, bare integer below.
std::string format_bits(double bits);

// Inverse of format_bits for reference strings like "15.2 Gb" or "949 Tb".
double parse_bits(const std::string& text);

// True when the computed value, formatted at the reference's displayed
// precision, rounds to the reference. Integer mantissas match within 0.5 of
// a unit, one-decimal mantissas within 0.05.
bool display_matches(double computed_bits, const std::string& reference);

struct MethodRow {
  Method method;
  std::uint64_t batches = 0;
  std::uint64_t params_per_batch = 0;
  std::uint64_t bits_per_batch = 0;
  std::uint64_t uplink_bits = 0;
  std::uint64_t downlink_bits = 0;
};

struct PayloadReport {
  std::vector<MethodRow> rows;
  OrderingCheck ordering;
  bool ratio_bound = false;
  // One line per reference cell that the computed table does not reproduce.
  std::vector<std::string> notes;
};

// reference maps method name -> column name -> display string; columns are
// "uplink", "downlink", "per_batch". Cells that disagree with the computed
// values become notes.
PayloadReport build_report(const PayloadInputs& in,
                           const std::map<std::string, std::map<std::string, std::string>>&
                               reference = {});

std::string render_text(const PayloadReport& report);
// header_lines are emitted first, each prefixed with '#'.
std::string render_csv(const PayloadReport& report,
                       const std::vector<std::string>& header_lines = {});

}  // namespace fbftl
