#include <algorithm>

#include "dgattn/grouped_matmul.hpp"
#include "dgattn/numerics.hpp"

namespace dgattn::reference {

namespace {

Tensor group_rows(const Tensor& sorted, const GroupedLayout& layout, std::size_t j) {
  const std::size_t b = layout.span_begin(j), n = layout.span_end(j) - b;
  Tensor out({n, sorted.cols()});
  std::copy_n(sorted.row(b).data(), n * sorted.cols(), out.data().data());
  return out;
}

void put_rows(Tensor& sorted, const Tensor& block, const GroupedLayout& layout, std::size_t j) {
  std::copy_n(block.data().data(), block.size(), sorted.row(layout.span_begin(j)).data());
}

}  // namespace

Tensor form1(const Tensor& a_sorted, const Tensor& b, const SelectionIndex& sel,
             const GroupedLayout& layout) {
  Tensor out({layout.tokens(), sel.k});
  for (std::size_t j = 0; j < layout.groups(); ++j) {
    if (layout.assign.sizes[j] == 0) continue;
    put_rows(out, matmul_nt(group_rows(a_sorted, layout, j), gather_rows(b, sel.row(j))), layout, j);
  }
  return out;
}

Tensor form2(const Tensor& a_sorted, const Tensor& b, const SelectionIndex& sel,
             const GroupedLayout& layout) {
  Tensor out({layout.tokens(), b.cols()});
  for (std::size_t j = 0; j < layout.groups(); ++j) {
    if (layout.assign.sizes[j] == 0) continue;
    put_rows(out, matmul(group_rows(a_sorted, layout, j), gather_rows(b, sel.row(j))), layout, j);
  }
  return out;
}

Tensor form3(const Tensor& q_sorted, const Tensor& grad_p_sorted, const SelectionIndex& sel,
             const GroupedLayout& layout) {
  Tensor out({layout.tokens(), q_sorted.cols()});
  for (std::size_t j = 0; j < layout.groups(); ++j) {
    if (layout.assign.sizes[j] == 0) continue;
    const Tensor contrib =
        matmul_tn(group_rows(grad_p_sorted, layout, j), group_rows(q_sorted, layout, j));
    scatter_add_rows(out, contrib, sel.row(j));
  }
  return out;
}

Tensor form4(const Tensor& p_sorted, const Tensor& grad_y_sorted, const SelectionIndex& sel,
             const GroupedLayout& layout) {
  Tensor out({layout.tokens(), grad_y_sorted.cols()});
  for (std::size_t j = 0; j < layout.groups(); ++j) {
    if (layout.assign.sizes[j] == 0) continue;
    const Tensor contrib =
        matmul_tn(group_rows(p_sorted, layout, j), group_rows(grad_y_sorted, layout, j));
    scatter_add_rows(out, contrib, sel.row(j));
  }
  return out;
}

}  // namespace dgattn::reference
