// Wire types for the annotation service. Field names match the JSON
// payloads; do not rename.

export interface PartClass {
  class_id: number;
  name: string;
  sensor_id: string;
}

export interface RecordingSummary {
  recording_id: string;
  duration_ms: number;
  sensors: string[];
  n_labels: number;
  label_counts: Record<string, number>;
  n_state_changes: number | null;
  warnings: string[];
}

export interface RecordingsIndex {
  recordings: RecordingSummary[];
  invalid: { recording_id: string; error: string }[];
  classes: PartClass[];
}

export interface StreamSeries {
  sensor_id: string;
  n_samples: number;
  t_ms: number[];
  min_g: number[];
  max_g: number[];
}

export interface StateChangeOut {
  t_ms: number;
  sensor: string;
  delta_g: number;
  class_id: number | null;
}

export interface StreamsPayload {
  recording_id: string;
  duration_ms: number;
  streams: StreamSeries[];
  state_changes: StateChangeOut[];
  detector_error: string | null;
  warnings: string[];
}

export interface FrameEntry {
  t_ms: number;
  frame: number;
}

export interface FramesPayload {
  recording_id: string;
  entries: FrameEntry[];
}

export interface LabelOut {
  label_id: string;
  class_id: number;
  t_start_ms: number;
  t_end_ms: number;
  source: string;
}

export interface LabelsPayload {
  recording_id: string;
  duration_ms: number;
  d_ms: number;
  labels: LabelOut[];
}
