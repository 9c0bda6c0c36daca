#pragma once

#include <map>
#include <string>

#include "pansharp/nn.hpp"
#include "pansharp/tensor.hpp"

namespace ps {

struct CheckpointInfo {
  std::string stage;        // "pretrain-edsr", "pretrain-vit", "stage1", "stage2"
  std::string config_hash;  // hash of the run configuration
  std::string parent_hash;  // content hash of the stage-1 checkpoint (stage 2 lineage)
  std::int64_t step = 0;    // optimizer step count, when training state is included
};

// A checkpoint is a directory of PSTF files, one per parameter, plus
// manifest.json listing name, shape, trainable flag and stage tag. `extra`
// carries optimizer moment buffers.
void save_checkpoint(const std::string& dir, const ParamStore& store, const CheckpointInfo& info,
                     const std::map<std::string, Tensor>& extra = {});

// Loads values into an already-constructed store; every stored parameter must
// exist with a matching shape. Missing files or shape drift throw.
CheckpointInfo load_checkpoint(const std::string& dir, ParamStore& store,
                               std::map<std::string, Tensor>* extra = nullptr);

// Content hash recorded in the manifest (FNV-1a over every tensor payload).
std::string checkpoint_hash(const std::string& dir);

}  // namespace ps
