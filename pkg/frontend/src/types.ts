// JSON contracts of the lyricsmith HTTP service. These mirror the server's
// pydantic schemas exactly; documents shown in the UI are always verbatim
// service responses.

export type Granularity = "paragraph" | "line" | "phrase" | "word";
export type LayoutName = "front" | "back" | "both";

export interface WordJson {
  text: string;
  syllables: number;
}

export interface LineJson {
  words: WordJson[];
}

export interface ParagraphJson {
  form: string;
  form_index: number;
  lines: LineJson[];
}

export interface DocumentJson {
  id: string;
  language_tag: string;
  paragraphs: ParagraphJson[];
}

export interface SegmentSpec {
  kind: "word" | "phrase";
  syllables: number;
}

export interface LineSpec {
  syllables?: number | null;
  segmentation?: SegmentSpec[] | null;
}

export interface SectionSpec {
  form: string;
  paragraph_syllables?: number | null;
  lines?: LineSpec[] | null;
}

export interface DecodeOverrides {
  top_k?: number;
  top_p?: number;
  temperature?: number;
  repetition_penalty?: number;
  max_tokens_per_segment?: number;
}

export interface GenerateRequest {
  input_text: string;
  plan: SectionSpec[];
  layout: LayoutName;
  params?: DecodeOverrides | null;
  seed: number;
  model?: string | null;
  session_id?: string | null;
}

export interface MaskSpec {
  paragraph: number;
  granularity: Granularity;
  line?: number;
  word_start?: number;
  word_count?: number;
  syllables?: number;
}

export interface InfillRequest {
  document: DocumentJson;
  masks: MaskSpec[];
  same_mask?: boolean;
  no_songform?: boolean;
  n_samples?: number;
  params?: DecodeOverrides | null;
  seed: number;
  model?: string | null;
  session_id?: string | null;
}

export interface SequenceItem {
  token?: string;
  text?: string;
  role: "condition" | "predict";
  provenance?: "forced" | "sampled" | "injected_on_timeout";
}

export interface SegmentReport {
  granularity: Granularity;
  requested: number;
  realized: number;
  text: string;
}

export interface GenerateResponse {
  document: DocumentJson;
  segments: SegmentReport[];
  requested_constraints: { granularity: Granularity; syllables: number }[];
  sequence: SequenceItem[];
  truncated_segments: number;
  seed: number;
  layout: LayoutName;
}

export interface InfillAlternative {
  document: DocumentJson;
  segments: SegmentReport[];
  sequence: SequenceItem[];
  truncated_segments: number;
  seed: number;
}

export interface InfillResponse {
  alternatives: InfillAlternative[];
  document: DocumentJson;
}

export interface ModelsResponse {
  models: { name: string; kind: string }[];
  vocab_loaded: boolean;
}

export interface TraceEvent {
  type: "token" | "done" | "segment_context";
  value?: string;
  provenance?: string;
  rank?: number | null;
  truncated_segments?: number;
}
