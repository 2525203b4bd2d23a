#pragma once

#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "spfde/model.hpp"
#include "spfde/rng.hpp"

namespace spfde {

// One grow phase of the structure-search schedule: during [start,end) the
// network trains at sparsity s - grow_offset.
struct DstPhase {
  int start_epoch = 0;
  int end_epoch = 0;
  double grow_offset = 0.0;
};

// Epoch staircase of the prune-and-grow search. Update events fire at
// epochs == 0 (mod interval); the event at search_end prunes to the final
// sparsity with no regrowth and search stops.
struct DstSchedule {
  std::vector<DstPhase> phases;
  int search_end = 0;
  int interval = 1;

  // phase_starts: (epoch, grow offset) pairs, ascending, first at epoch 0.
  static DstSchedule make(int interval, int search_end,
                          std::vector<std::pair<int, double>> phase_starts,
                          double sparsity);

  // Grow offset in effect at `epoch`; empty at/after search_end.
  std::optional<double> delta_at(int epoch) const;

  // The sparsity a masked layer holds at `epoch` (s - delta during search,
  // s afterwards).
  double sparsity_at(double s, int epoch) const;

  bool is_update_epoch(int epoch) const {
    return epoch >= 0 && epoch % interval == 0 && epoch <= search_end;
  }
};

// round((1 - sparsity) * size), half away from zero.
std::size_t target_nnz(std::size_t size, double sparsity);

// Keep the round((1-target)*size) largest-magnitude unmasked weights; mask
// and zero the rest (weights and momentum). Ties at the threshold keep the
// lower flat index.
void prune_to(MaskedLayer& layer, double target_sparsity);

// Activate masked positions, chosen uniformly at random, until the layer
// holds round((1-target)*size) nonzeros. New weights and their momentum
// start at zero.
void grow_to(MaskedLayer& layer, double target_sparsity, Rng& rng);

// One Prune&Grow event over every eligible layer (non-frozen, masked,
// active block). At search_end this is the final prune with no regrowth;
// past search_end it is a no-op.
void structure_update(SparseNetwork& net, int epoch, const DstSchedule& sched,
                      Rng& rng,
                      const std::function<bool(std::size_t)>& block_active = {});

}  // namespace spfde
