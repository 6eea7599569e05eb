// Headless studio state machine: plan drafting, generation, span selection,
// infill alternatives, accept/undo. The DOM layer renders this state; tests
// drive it directly. Documents always come verbatim from service responses.

import { StudioClient } from "./api.js";
import { buildBadges, type Badge } from "./badges.js";
import { buildRequest, validateDraft, type PlanDraft, emptyDraft } from "./plan.js";
import {
  makeSelection,
  selectionSyllables,
  selectionToMask,
  type Selection,
} from "./selection.js";
import { EditSession } from "./session.js";
import type {
  DocumentJson,
  GenerateResponse,
  Granularity,
  InfillAlternative,
} from "./types.js";

export class Studio {
  draft: PlanDraft = emptyDraft();
  readonly session = new EditSession();
  selection: Selection | null = null;
  lastGenerate: GenerateResponse | null = null;
  alternatives: InfillAlternative[] = [];
  badges: Badge[] = [];

  constructor(private readonly client: StudioClient) {}

  document(): DocumentJson | null {
    return this.session.current();
  }

  async runGenerate(sessionId?: string): Promise<GenerateResponse> {
    const errors = validateDraft(this.draft);
    if (errors.length > 0) {
      throw new Error(errors.join("; "));
    }
    const response = await this.client.generate(buildRequest(this.draft, sessionId));
    this.lastGenerate = response;
    this.session.apply(response.document, "generate");
    this.badges = buildBadges(response.segments, response.sequence);
    this.selection = null;
    this.alternatives = [];
    return response;
  }

  select(
    paragraph: number,
    line: number | null = null,
    wordStart: number | null = null,
    wordCount: number | null = null,
    override: Granularity | null = null,
  ): Selection {
    const doc = this.document();
    if (!doc) {
      throw new Error("nothing generated yet");
    }
    this.selection = makeSelection(doc, paragraph, line, wordStart, wordCount, override);
    return this.selection;
  }

  selectionCurrentSyllables(): number {
    const doc = this.document();
    if (!doc || !this.selection) {
      throw new Error("no active selection");
    }
    return selectionSyllables(doc, this.selection);
  }

  async requestInfill(
    syllables: number | undefined,
    nSamples = 1,
    seed = 0,
    sessionId?: string,
  ): Promise<InfillAlternative[]> {
    const doc = this.document();
    if (!doc || !this.selection) {
      throw new Error("no active selection");
    }
    const response = await this.client.infill({
      document: doc,
      masks: [selectionToMask(this.selection, syllables)],
      n_samples: nSamples,
      seed,
      model: this.draft.model,
      session_id: sessionId ?? null,
    });
    this.alternatives = response.alternatives;
    return this.alternatives;
  }

  acceptAlternative(index: number): DocumentJson {
    const alternative = this.alternatives[index];
    if (!alternative) {
      throw new Error(`no alternative ${index}`);
    }
    this.session.apply(alternative.document, `infill seed ${alternative.seed}`);
    this.badges = buildBadges(alternative.segments, alternative.sequence);
    this.alternatives = [];
    this.selection = null;
    return alternative.document;
  }

  undo(): DocumentJson | null {
    const doc = this.session.undo();
    if (doc !== null) {
      this.selection = null;
    }
    return doc;
  }

  redo(): DocumentJson | null {
    const doc = this.session.redo();
    if (doc !== null) {
      this.selection = null;
    }
    return doc;
  }
}
