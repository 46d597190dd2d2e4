#include "embvos/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

#include "json.hpp"

namespace embvos {

namespace {

std::vector<unsigned char> binary(const LabelTensor& labels, int id) {
  std::vector<unsigned char> out(static_cast<std::size_t>(labels.size()));
  for (Index i = 0; i < labels.size(); ++i) out[static_cast<std::size_t>(i)] = labels.data()[i] == id;
  return out;
}

void require_same(const LabelTensor& a, const LabelTensor& b) {
  require_rank(a.shape(), 2, "metric mask");
  require_shape(b.shape(), a.shape(), "metric masks");
}

std::vector<unsigned char> dilate(const std::vector<unsigned char>& b, Index H, Index W, Index r) {
  std::vector<unsigned char> out(b.size(), 0);
  std::vector<std::pair<Index, Index>> disk;
  for (Index dy = -r; dy <= r; ++dy)
    for (Index dx = -r; dx <= r; ++dx)
      if (dy * dy + dx * dx <= r * r) disk.emplace_back(dy, dx);
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x) {
      if (!b[static_cast<std::size_t>(y * W + x)]) continue;
      for (auto [dy, dx] : disk) {
        const Index Y = y + dy, X = x + dx;
        if (Y >= 0 && Y < H && X >= 0 && X < W) out[static_cast<std::size_t>(Y * W + X)] = 1;
      }
    }
  return out;
}

}  // namespace

double j_measure(const LabelTensor& pred, const LabelTensor& gt, int object_id) {
  require_same(pred, gt);
  Index inter = 0, uni = 0;
  for (Index i = 0; i < pred.size(); ++i) {
    const bool p = pred.data()[i] == object_id, g = gt.data()[i] == object_id;
    inter += p && g;
    uni += p || g;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<unsigned char> mask_boundary(const std::vector<unsigned char>& m, Index H, Index W) {
  std::vector<unsigned char> out(m.size(), 0);
  auto fg = [&](Index y, Index x) { return m[static_cast<std::size_t>(y * W + x)] != 0; };
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x) {
      if (!fg(y, x)) continue;
      const bool edge = y == 0 || x == 0 || y == H - 1 || x == W - 1;
      if (edge || !fg(y - 1, x) || !fg(y + 1, x) || !fg(y, x - 1) || !fg(y, x + 1))
        out[static_cast<std::size_t>(y * W + x)] = 1;
    }
  return out;
}

Index boundary_radius(Index H, Index W, double tol_frac) {
  const double diag = std::sqrt(static_cast<double>(H * H + W * W));
  return static_cast<Index>(std::ceil(tol_frac * diag));
}

double f_measure(const LabelTensor& pred, const LabelTensor& gt, int object_id, double tol_frac) {
  require_same(pred, gt);
  const Index H = pred.dim(0), W = pred.dim(1);
  const auto pb = mask_boundary(binary(pred, object_id), H, W);
  const auto gb = mask_boundary(binary(gt, object_id), H, W);
  const auto np = std::count(pb.begin(), pb.end(), 1);
  const auto ng = std::count(gb.begin(), gb.end(), 1);
  if (np == 0 && ng == 0) return 1.0;
  if (np == 0 || ng == 0) return 0.0;
  const Index r = boundary_radius(H, W, tol_frac);
  const auto pd = dilate(pb, H, W, r);
  const auto gd = dilate(gb, H, W, r);
  Index p_hit = 0, g_hit = 0;
  for (std::size_t i = 0; i < pb.size(); ++i) {
    p_hit += pb[i] && gd[i];
    g_hit += gb[i] && pd[i];
  }
  const double precision = static_cast<double>(p_hit) / static_cast<double>(np);
  const double recall = static_cast<double>(g_hit) / static_cast<double>(ng);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

SequenceReport evaluate_sequence(const std::vector<LabelTensor>& preds, const std::vector<LabelTensor>& gts,
                                 const EvalOptions& options, const std::string& name) {
  if (preds.size() != gts.size())
    throw ContractError("evaluate_sequence '" + name + "': " + std::to_string(preds.size()) + " predictions for " +
                        std::to_string(gts.size()) + " ground-truth frames");
  const std::size_t first = options.include_first ? 0 : 1;
  if (gts.size() <= first) throw ContractError("evaluate_sequence '" + name + "': no frames to evaluate");

  std::set<int> ids;
  for (const auto& g : gts)
    for (const auto v : g)
      if (v != 0) ids.insert(v);

  SequenceReport rep;
  rep.name = name;
  rep.frames_evaluated = static_cast<Index>(gts.size() - first);
  for (const int id : ids) {
    ObjectScore s{id, 0.0, 0.0};
    for (std::size_t t = first; t < gts.size(); ++t) {
      s.j += j_measure(preds[t], gts[t], id);
      s.f += f_measure(preds[t], gts[t], id, options.tol_frac);
    }
    s.j /= static_cast<double>(rep.frames_evaluated);
    s.f /= static_cast<double>(rep.frames_evaluated);
    rep.objects.push_back(s);
  }
  if (!rep.objects.empty()) {
    rep.j_mean = rep.f_mean = 0.0;
    for (const auto& s : rep.objects) {
      rep.j_mean += s.j;
      rep.f_mean += s.f;
    }
    rep.j_mean /= static_cast<double>(rep.objects.size());
    rep.f_mean /= static_cast<double>(rep.objects.size());
  }
  rep.jf_mean = (rep.j_mean + rep.f_mean) / 2.0;
  return rep;
}

EvalReport summarize(std::vector<SequenceReport> sequences, const EvalOptions& options) {
  EvalReport r;
  r.options = options;
  r.sequences = std::move(sequences);
  double j = 0.0, f = 0.0;
  std::size_t n = 0;
  for (const auto& s : r.sequences)
    for (const auto& o : s.objects) {
      j += o.j;
      f += o.f;
      ++n;
    }
  if (n > 0) {
    r.j_mean = j / static_cast<double>(n);
    r.f_mean = f / static_cast<double>(n);
  }
  r.jf_mean = (r.j_mean + r.f_mean) / 2.0;
  return r;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json doc;
  doc["J_mean"] = j_mean;
  doc["F_mean"] = f_mean;
  doc["JF_mean"] = jf_mean;
  doc["metadata"] = {{"first_frame_excluded", !options.include_first}, {"tol_frac", options.tol_frac}};
  nlohmann::ordered_json seqs = nlohmann::ordered_json::array();
  for (const auto& s : sequences) {
    nlohmann::ordered_json js;
    js["name"] = s.name;
    js["frames_evaluated"] = s.frames_evaluated;
    js["J_mean"] = s.j_mean;
    js["F_mean"] = s.f_mean;
    js["JF_mean"] = s.jf_mean;
    js["objects"] = nlohmann::ordered_json::array();
    for (const auto& o : s.objects)
      js["objects"].push_back({{"object", o.object}, {"J", o.j}, {"F", o.f}, {"JF", (o.j + o.f) / 2.0}});
    seqs.push_back(js);
  }
  doc["sequences"] = seqs;
  return doc.dump(2) + "\n";
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "sequence,object,J,F\n" << std::setprecision(17);
  for (const auto& s : sequences)
    for (const auto& o : s.objects) os << s.name << ',' << o.object << ',' << o.j << ',' << o.f << '\n';
  return os.str();
}

}  // namespace embvos
