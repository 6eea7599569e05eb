// Plan drafts: the editable UI-side model of a generation request. A draft
// mirrors the GenerateRequest schema exactly, so export/import and request
// building are lossless.

import type {
  DecodeOverrides,
  GenerateRequest,
  LayoutName,
  LineSpec,
  SectionSpec,
} from "./types.js";

export const SONG_FORMS = ["Verse", "Chorus", "PreChorus", "PostChorus", "Bridge"];
export const SYL_MIN = 1;
export const SYL_MAX = 300;

export interface LineDraft {
  syllables: number | null;
  segmentation: { kind: "word" | "phrase"; syllables: number }[] | null;
}

export interface SectionDraft {
  form: string;
  paragraphSyllables: number | null;
  lines: LineDraft[] | null;
}

export interface PlanDraft {
  sections: SectionDraft[];
  inputText: string;
  layout: LayoutName;
  decode: DecodeOverrides | null;
  seed: number;
  model: string | null;
}

export function emptyDraft(): PlanDraft {
  return {
    sections: [
      { form: "Verse", paragraphSyllables: null, lines: [{ syllables: 6, segmentation: null }] },
    ],
    inputText: "",
    layout: "back",
    decode: null,
    seed: 0,
    model: null,
  };
}

function checkSyllables(value: number, where: string, errors: string[]): void {
  if (!Number.isInteger(value) || value < SYL_MIN || value > SYL_MAX) {
    errors.push(`${where}: syllables must be an integer in ${SYL_MIN}..${SYL_MAX}`);
  }
}

export function validateDraft(draft: PlanDraft): string[] {
  const errors: string[] = [];
  if (draft.sections.length === 0) {
    errors.push("plan needs at least one section");
  }
  draft.sections.forEach((section, s) => {
    const where = `section ${s + 1}`;
    if (!SONG_FORMS.includes(section.form)) {
      errors.push(`${where}: unknown form ${section.form}`);
    }
    if (section.paragraphSyllables !== null) {
      checkSyllables(section.paragraphSyllables, where, errors);
      return;
    }
    if (!section.lines || section.lines.length === 0) {
      errors.push(`${where}: needs paragraph syllables or at least one line`);
      return;
    }
    section.lines.forEach((line, l) => {
      const lineWhere = `${where}, line ${l + 1}`;
      if (line.segmentation && line.segmentation.length > 0) {
        line.segmentation.forEach((seg, i) =>
          checkSyllables(seg.syllables, `${lineWhere}, segment ${i + 1}`, errors),
        );
        const total = line.segmentation.reduce((acc, seg) => acc + seg.syllables, 0);
        if (line.syllables !== null && line.syllables !== total) {
          errors.push(`${lineWhere}: line total ${line.syllables} != segmentation total ${total}`);
        }
      } else if (line.syllables === null) {
        errors.push(`${lineWhere}: needs a syllable target`);
      } else {
        checkSyllables(line.syllables, lineWhere, errors);
      }
    });
  });
  return errors;
}

export function buildRequest(draft: PlanDraft, sessionId?: string): GenerateRequest {
  const plan: SectionSpec[] = draft.sections.map((section) => {
    if (section.paragraphSyllables !== null) {
      return { form: section.form, paragraph_syllables: section.paragraphSyllables };
    }
    const lines: LineSpec[] = (section.lines ?? []).map((line) =>
      line.segmentation && line.segmentation.length > 0
        ? { segmentation: line.segmentation }
        : { syllables: line.syllables },
    );
    return { form: section.form, lines };
  });
  return {
    input_text: draft.inputText,
    plan,
    layout: draft.layout,
    params: draft.decode,
    seed: draft.seed,
    model: draft.model,
    session_id: sessionId ?? null,
  };
}

export function exportDraft(draft: PlanDraft): string {
  return JSON.stringify(draft, null, 2);
}

export function importDraft(serialized: string): PlanDraft {
  const parsed = JSON.parse(serialized) as PlanDraft;
  const errors = validateDraft(parsed);
  if (errors.length > 0) {
    throw new Error(`invalid plan draft: ${errors.join("; ")}`);
  }
  return parsed;
}
