#include "fbftl/payload.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>

namespace fbftl {

const char* to_string(Method m) {
  switch (m) {
    case Method::fl: return "FL";
    case Method::ftl_f: return "FTL_f";
    case Method::ftl_c: return "FTL_c";
    case Method::fbftl: return "FbFTL";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  if (name == "FL") return Method::fl;
  if (name == "FTL_f") return Method::ftl_f;
  if (name == "FTL_c") return Method::ftl_c;
  if (name == "FbFTL") return Method::fbftl;
  throw config_error("unknown method: " + name + " (expected FL, FTL_f, FTL_c or FbFTL)");
}

void PayloadInputs::validate() const {
  if (bit_width <= 0) throw config_error("payload: bit_width must be positive");
  if (params_full == 0) throw config_error("payload: params_full must be positive");
  if (params_head == 0 || params_head > params_full)
    throw config_error("payload: params_head must be in [1, params_full]");
  if (feature_dim == 0) throw config_error("payload: feature_dim must be positive");
}

PayloadInputs payload_inputs_from_arch(const ArchitectureSpec& arch,
                                       std::uint64_t clients_per_round) {
  arch.validate();
  PayloadInputs in;
  in.bit_width = arch.bit_width;
  in.params_full = total_params(arch);
  in.params_head = total_params_from(arch, arch.cut_index);
  in.feature_dim = feature_dim_at_cut(arch);
  const auto trainables = arch.trainable_layers();
  const LayerSpec& cut = *trainables[static_cast<std::size_t>(arch.cut_index - 1)];
  in.head_out_dim = static_cast<std::uint64_t>(cut.out_dim);
  in.clients_per_round = clients_per_round;
  return in;
}

namespace {

using u128 = unsigned __int128;

std::uint64_t checked_u64(u128 v, const char* what) {
  if (v > static_cast<u128>(UINT64_MAX))
    throw numeric_error(std::string(what) + ": value exceeds 64 bits");
  return static_cast<std::uint64_t>(v);
}

std::uint64_t batches_of(Method m, const PayloadInputs& in) {
  switch (m) {
    case Method::fl: return in.batches_fl;
    case Method::ftl_f: return in.batches_ftl_f;
    case Method::ftl_c: return in.batches_ftl_c;
    case Method::fbftl: return in.batches_fbftl;
  }
  throw std::invalid_argument("batches_of: unknown method");
}

}  // namespace

std::uint64_t params_per_batch(Method m, const PayloadInputs& in) {
  in.validate();
  switch (m) {
    case Method::fl:
    case Method::ftl_f:
      return in.params_full;
    case Method::ftl_c:
      return in.params_head;
    case Method::fbftl:
      return in.feature_dim;
  }
  throw std::invalid_argument("params_per_batch: unknown method");
}

std::uint64_t uplink_total(Method m, const PayloadInputs& in) {
  in.validate();
  const u128 total = static_cast<u128>(in.bit_width) *
                     static_cast<u128>(params_per_batch(m, in)) *
                     static_cast<u128>(batches_of(m, in));
  return checked_u64(total, "uplink_total");
}

std::uint64_t downlink_total(Method m, const PayloadInputs& in) {
  in.validate();
  if (m == Method::fbftl) {
    // One-time broadcast of the frozen part of the model.
    const u128 total = static_cast<u128>(in.bit_width) *
                       static_cast<u128>(in.params_full - in.params_head);
    return checked_u64(total, "downlink_total");
  }
  // Every round the full model goes out once; a round is clients_per_round batches.
  if (in.clients_per_round == 0)
    throw config_error("payload: clients_per_round must be positive for gradient-sharing downlink");
  const u128 numer = static_cast<u128>(in.bit_width) * static_cast<u128>(in.params_full) *
                     static_cast<u128>(batches_of(m, in));
  return checked_u64(numer / in.clients_per_round, "downlink_total");
}

OrderingCheck ordering_check(const PayloadInputs& in) {
  in.validate();
  OrderingCheck check;
  const u128 fb = static_cast<u128>(uplink_total(Method::fbftl, in));
  const u128 fl = uplink_total(Method::fl, in);
  const u128 f = uplink_total(Method::ftl_f, in);
  const u128 c = uplink_total(Method::ftl_c, in);
  // "far below" pinned at two orders of magnitude.
  check.fbftl_far_below = 100 * fb < fl && 100 * fb < f && 100 * fb < c;
  check.ftl_f_below_fl = f < fl;
  check.ftl_c_below_ftl_f = c < f;
  return check;
}

bool ratio_bound_check(const PayloadInputs& in) {
  in.validate();
  if (in.head_out_dim == 0) throw config_error("payload: head_out_dim must be positive");
  // Per single upload: params_head / feature_dim > head_out_dim.
  const bool per_upload =
      in.params_head > static_cast<u128>(in.feature_dim) * in.head_out_dim;
  // On totals: P_head-gradient / P_feature > (gradient batches / feature batches) x head_out_dim.
  if (in.batches_ftl_c == 0 || in.batches_fbftl == 0) return per_upload;
  const u128 lhs = static_cast<u128>(uplink_total(Method::ftl_c, in)) *
                   static_cast<u128>(in.batches_fbftl);
  const u128 rhs = static_cast<u128>(uplink_total(Method::fbftl, in)) *
                   static_cast<u128>(in.batches_ftl_c) * static_cast<u128>(in.head_out_dim);
  return per_upload && lhs > rhs;
}

namespace {

double parse_number_strict(const std::string& s) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0')
    throw config_error("bad numeric field '" + s + "'");
  return v;
}

struct Unit {
  const char* suffix;
  double scale;
};

constexpr Unit kUnits[] = {
    {"b", 1.0}, {"Kb", 1e3}, {"Mb", 1e6}, {"Gb", 1e9}, {"Tb", 1e12},
};

const Unit& unit_for(double bits) {
  std::size_t i = 0;
  while (i + 1 < std::size(kUnits) && bits >= kUnits[i + 1].scale) ++i;
  return kUnits[i];
}

}  // namespace

std::string format_bits(double bits) {
  if (bits < 0) throw std::invalid_argument("format_bits: negative bits");
  if (bits == 0.0) return "0 b";
  char buf[64];
  if (bits < 1000.0) {
    std::snprintf(buf, sizeof buf, "%.0f b", bits);
    return buf;
  }
  const Unit& u = unit_for(bits);
  std::snprintf(buf, sizeof buf, "%.1f %s", bits / u.scale, u.suffix);
  return buf;
}

double parse_bits(const std::string& text) {
  std::istringstream ss(text);
  double mantissa = 0.0;
  std::string suffix;
  if (!(ss >> mantissa >> suffix))
    throw config_error("parse_bits: cannot parse '" + text + "'");
  for (const Unit& u : kUnits)
    if (suffix == u.suffix) return mantissa * u.scale;
  throw config_error("parse_bits: unknown unit '" + suffix + "'");
}

bool display_matches(double computed_bits, const std::string& reference) {
  std::istringstream ss(reference);
  std::string mantissa_text, suffix;
  if (!(ss >> mantissa_text >> suffix))
    throw config_error("display_matches: cannot parse '" + reference + "'");
  double scale = -1.0;
  for (const Unit& u : kUnits)
    if (suffix == u.suffix) scale = u.scale;
  if (scale < 0.0) throw config_error("display_matches: unknown unit '" + suffix + "'");
  const double ref_mantissa = parse_number_strict(mantissa_text);
  // Match at the precision the reference displays: half a unit in its last place.
  const std::size_t dot = mantissa_text.find('.');
  const int decimals = dot == std::string::npos
                           ? 0
                           : static_cast<int>(mantissa_text.size() - dot - 1);
  const double tol = 0.5 * std::pow(10.0, -decimals);
  return std::abs(computed_bits / scale - ref_mantissa) < tol;
}

PayloadReport build_report(
    const PayloadInputs& in,
    const std::map<std::string, std::map<std::string, std::string>>& reference) {
  in.validate();
  PayloadReport report;
  for (Method m : {Method::fl, Method::ftl_f, Method::ftl_c, Method::fbftl}) {
    MethodRow row;
    row.method = m;
    row.batches = batches_of(m, in);
    row.params_per_batch = params_per_batch(m, in);
    row.bits_per_batch =
        checked_u64(static_cast<u128>(in.bit_width) * row.params_per_batch, "bits_per_batch");
    row.uplink_bits = uplink_total(m, in);
    row.downlink_bits = downlink_total(m, in);
    report.rows.push_back(row);

    const auto ref_row = reference.find(to_string(m));
    if (ref_row == reference.end()) continue;
    auto check_cell = [&](const char* column, double computed) {
      const auto cell = ref_row->second.find(column);
      if (cell == ref_row->second.end()) return;
      if (!display_matches(computed, cell->second))
        report.notes.push_back(std::string(to_string(m)) + " " + column + ": computed " +
                               format_bits(computed) + ", reference " + cell->second);
    };
    check_cell("per_batch", static_cast<double>(row.bits_per_batch));
    check_cell("uplink", static_cast<double>(row.uplink_bits));
    check_cell("downlink", static_cast<double>(row.downlink_bits));
  }
  report.ordering = ordering_check(in);
  report.ratio_bound = ratio_bound_check(in);
  return report;
}

std::string render_text(const PayloadReport& report) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-8s %12s %16s %12s %12s %12s\n", "method", "batches",
                "params/batch", "bits/batch", "uplink", "downlink");
  out << line;
  for (const auto& row : report.rows) {
    std::snprintf(line, sizeof line, "%-8s %12llu %16llu %12s %12s %12s\n",
                  to_string(row.method), static_cast<unsigned long long>(row.batches),
                  static_cast<unsigned long long>(row.params_per_batch),
                  format_bits(static_cast<double>(row.bits_per_batch)).c_str(),
                  format_bits(static_cast<double>(row.uplink_bits)).c_str(),
                  format_bits(static_cast<double>(row.downlink_bits)).c_str());
    out << line;
  }
  out << "ordering: fbftl_far_below=" << (report.ordering.fbftl_far_below ? "yes" : "no")
      << " ftl_f_below_fl=" << (report.ordering.ftl_f_below_fl ? "yes" : "no")
      << " ftl_c_below_ftl_f=" << (report.ordering.ftl_c_below_ftl_f ? "yes" : "no") << "\n";
  out << "ratio_bound: " << (report.ratio_bound ? "holds" : "violated") << "\n";
  for (const auto& note : report.notes) out << "note: " << note << "\n";
  return out.str();
}

std::string render_csv(const PayloadReport& report,
                       const std::vector<std::string>& header_lines) {
  std::ostringstream out;
  for (const auto& h : header_lines) out << "# " << h << "\n";
  out << "method,batches,params_per_batch,bits_per_batch,uplink_bits,downlink_bits,"
         "uplink_display,downlink_display\n";
  for (const auto& row : report.rows) {
    out << to_string(row.method) << ',' << row.batches << ',' << row.params_per_batch << ','
        << row.bits_per_batch << ',' << row.uplink_bits << ',' << row.downlink_bits << ','
        << format_bits(static_cast<double>(row.uplink_bits)) << ','
        << format_bits(static_cast<double>(row.downlink_bits)) << "\n";
  }
  return out.str();
}

}  // namespace fbftl
