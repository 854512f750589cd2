// Frame-by-frame tracking loop with reference updates, plus the JSONL run-log
// round-trip and metric summary.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ragtrack/crm.hpp"
#include "ragtrack/metrics.hpp"
#include "ragtrack/model.hpp"
#include "ragtrack/synth.hpp"

namespace ragtrack {

struct FrameRecord {
  int frame = 0;
  PixelBox pred;
  PixelBox gt;
  std::optional<PixelBox> gt_alt;
  double iou = 0.0;
  double center_error = 0.0;
  int kb_size = 0;
  int tokens_kept = 0;
  std::string description_used;
  bool updated = false;  // reference refresh happened after this frame
};

struct RunSummary {
  double pr = 0, sr = 0, npr = 0, mpr = 0, msr = 0;
};

struct RunLog {
  std::vector<FrameRecord> records;
  RunSummary summary;
};

RunSummary summarize(const std::vector<FrameRecord>& records, double pr_threshold = 20.0,
                     double npr_threshold = 0.2);

// One JSON object per line: the frame records, then a final summary line.
std::string runlog_to_jsonl(const RunLog& log);
RunLog runlog_from_jsonl(const std::string& text);
void save_runlog(const std::string& path, const RunLog& log);
RunLog load_runlog(const std::string& path);

// Square crop window for a box: side = 2 * sqrt(w * h), clamped to the frame.
WindowPx context_window(const PixelBox& box, int frame_h, int frame_w);

// Runs the tracker over the sequence. Frame 0 is the initialization contract
// (the ground-truth box, no inference); later frames crop around the previous
// prediction. When the peak classification score reaches the update threshold
// and enough frames have passed, template crops and the description refresh,
// taking effect from the next frame. `max_frames` < 0 processes everything.
RunLog run_tracker(const SequenceRecord& seq, RagTrackModel& model,
                   DescriptionProvider& provider, int max_frames = -1);

}  // namespace ragtrack
