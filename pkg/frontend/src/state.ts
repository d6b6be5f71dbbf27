// Application state: the set of known inversions, the active one, and the
// per-direction slider values. Pure data + transitions; the DOM layer
// renders from it.

import type { DirectionInfo, InversionSummary } from "./api.js";

export interface InversionEntry {
    id: string;
    psnrX1: number;
    psnrX2: number;
}

export const ALPHA_MIN = -5;
export const ALPHA_MAX = 5;
export const ALPHA_STEP = 0.25;
export const DEBOUNCE_MS = 150;

export class AppState {
    inversions: InversionEntry[] = [];
    activeId: string | null = null;
    directions: DirectionInfo[] = [];
    sliders = new Map<string, number>();

    addInversion(entry: InversionEntry): void {
        this.inversions = this.inversions.filter((e) => e.id !== entry.id);
        this.inversions.push(entry);
        this.activeId = entry.id;
        this.resetSliders();
    }

    restore(listed: InversionSummary[]): void {
        this.inversions = listed.map((s) => ({
            id: s.id, psnrX1: s.psnr_x1, psnrX2: s.psnr_x2,
        }));
        if (this.activeId && !this.inversions.some((e) => e.id === this.activeId)) {
            this.activeId = null;
        }
        if (!this.activeId && this.inversions.length > 0) {
            this.activeId = this.inversions[this.inversions.length - 1].id;
        }
    }

    setDirections(directions: DirectionInfo[]): void {
        this.directions = directions;
        this.resetSliders();
    }

    setSlider(directionId: string, alpha: number): number {
        const clamped = Math.min(ALPHA_MAX, Math.max(ALPHA_MIN, alpha));
        this.sliders.set(directionId, clamped);
        return clamped;
    }

    slider(directionId: string): number {
        return this.sliders.get(directionId) ?? 0;
    }

    resetSliders(): void {
        this.sliders.clear();
    }

    get allSlidersAtZero(): boolean {
        for (const value of this.sliders.values()) {
            if (value !== 0) return false;
        }
        return true;
    }

    get active(): InversionEntry | null {
        return this.inversions.find((e) => e.id === this.activeId) ?? null;
    }
}
