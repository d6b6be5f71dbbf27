// DOM layer: builds the three panels and renders from AppState.

import { ApiClient, DirectionInfo } from "./api.js";
import { DebouncedRequester } from "./scheduler.js";
import { ALPHA_MAX, ALPHA_MIN, ALPHA_STEP, AppState, DEBOUNCE_MS } from "./state.js";

function el<K extends keyof HTMLElementTagNameMap>(
    tag: K, className?: string, text?: string): HTMLElementTagNameMap[K] {
    const node = document.createElement(tag);
    if (className) node.className = className;
    if (text !== undefined) node.textContent = text;
    return node;
}

interface EditJob {
    inversionId: string;
    directionId: string;
    alpha: number;
}

export class App {
    readonly root: HTMLElement;
    private state = new AppState();
    private editImage: HTMLImageElement;
    private editStatus: HTMLElement;
    private previews: HTMLElement;
    private sliderBox: HTMLElement;
    private pickers: [HTMLSelectElement, HTMLSelectElement];
    private mixImage: HTMLImageElement;
    private uploadStatus: HTMLElement;
    private editRequester: DebouncedRequester<EditJob>;
    private objectUrl: string | null = null;

    constructor(private api: ApiClient) {
        this.root = el("div", "app");
        this.editRequester = new DebouncedRequester<EditJob>(
            DEBOUNCE_MS, (job, signal, isCurrent) =>
                this.runEdit(job, signal, isCurrent));

        const title = el("header");
        title.append(el("h1", "", "feature-style inversion lab"));
        this.uploadStatus = el("span", "status", "checking service…");
        title.append(this.uploadStatus);
        this.root.append(title);

        this.previews = el("div", "previews");
        this.root.append(this.buildUploadPanel(), this.previews);

        this.sliderBox = el("div", "sliders");
        this.editImage = el("img", "edit-frame");
        this.editStatus = el("span", "status");
        this.root.append(this.buildEditPanel());

        this.pickers = [el("select"), el("select")];
        this.mixImage = el("img", "mix-frame");
        this.root.append(this.buildMixPanel());
    }

    async boot(): Promise<void> {
        try {
            const health = await this.api.health();
            this.uploadStatus.textContent =
                health.status === "ok" ? `model ${health.checkpoint_hash?.slice(0, 8)}`
                                       : "service has no model loaded";
            const [dirs, listed] = await Promise.all(
                [this.api.directions(), this.api.listInversions()]);
            this.state.setDirections(dirs);
            this.state.restore(listed);
            this.renderSliders();
            this.renderInversions();
        } catch (err) {
            this.uploadStatus.textContent = `service unreachable: ${String(err)}`;
        }
    }

    // ---- upload panel ------------------------------------------------------

    private buildUploadPanel(): HTMLElement {
        const panel = el("section", "panel upload-panel");
        panel.append(el("h2", "", "1 · upload"));
        const input = el("input");
        input.type = "file";
        input.accept = "image/png";
        input.addEventListener("change", () => {
            const file = input.files?.[0];
            if (file) void this.upload(file);
        });
        panel.append(input);
        return panel;
    }

    private async upload(file: File): Promise<void> {
        this.uploadStatus.textContent = "inverting…";
        try {
            const resp = await this.api.invert(file);
            this.state.addInversion({
                id: resp.id, psnrX1: resp.psnr_x1, psnrX2: resp.psnr_x2,
            });
            this.uploadStatus.textContent = "";
            this.renderInversions();
            this.renderSliders();
            this.showX2Preview();
        } catch (err) {
            this.uploadStatus.textContent = `invert failed: ${String(err)}`;
        }
    }

    private renderInversions(): void {
        this.previews.replaceChildren();
        const active = this.state.active;
        if (!active) return;
        const variants: Array<["source" | "x1" | "x2", string, number | null]> = [
            ["source", "input", null],
            ["x1", "latent only", active.psnrX1],
            ["x2", "latent + feature", active.psnrX2],
        ];
        for (const [variant, label, psnr] of variants) {
            const card = el("figure", "card");
            const img = el("img");
            img.src = this.api.imageUrl(active.id, variant);
            const caption = el("figcaption", "",
                psnr === null ? label : `${label} · ${psnr.toFixed(2)} dB`);
            card.append(img, caption);
            this.previews.append(card);
        }
        for (const picker of this.pickers) {
            picker.replaceChildren();
            for (const inv of this.state.inversions) {
                const option = el("option", "", inv.id.slice(0, 8));
                option.value = inv.id;
                picker.append(option);
            }
            picker.value = active.id;
        }
    }

    // ---- edit panel ----------------------------------------------------------

    private buildEditPanel(): HTMLElement {
        const panel = el("section", "panel edit-panel");
        panel.append(el("h2", "", "2 · edit"));
        const reset = el("button", "", "reset");
        reset.addEventListener("click", () => this.resetSliders());
        panel.append(this.sliderBox, reset, this.editStatus, this.editImage);
        return panel;
    }

    private renderSliders(): void {
        this.sliderBox.replaceChildren();
        for (const direction of this.state.directions) {
            this.sliderBox.append(this.buildSliderRow(direction));
        }
    }

    private buildSliderRow(direction: DirectionInfo): HTMLElement {
        const row = el("label", "slider-row");
        row.append(el("span", "slider-name",
                      `${direction.name} [${direction.block_range.join("–")}]`));
        const slider = el("input");
        slider.type = "range";
        slider.min = String(ALPHA_MIN);
        slider.max = String(ALPHA_MAX);
        slider.step = String(ALPHA_STEP);
        slider.value = String(this.state.slider(direction.id));
        const badge = el("span", "alpha", slider.value);
        slider.addEventListener("input", () => {
            const alpha = this.state.setSlider(direction.id, Number(slider.value));
            badge.textContent = alpha.toFixed(2);
            this.scheduleEdit(direction.id, alpha);
        });
        row.append(slider, badge);
        return row;
    }

    private scheduleEdit(directionId: string, alpha: number): void {
        const active = this.state.active;
        if (!active) return;
        this.editStatus.textContent = "…";
        this.editRequester.request({
            inversionId: active.id, directionId, alpha,
        });
    }

    private async runEdit(job: EditJob, signal: AbortSignal,
                          isCurrent: () => boolean): Promise<void> {
        const blob = await this.api.edit(job.inversionId, job.directionId,
                                         job.alpha, signal);
        if (!isCurrent()) return; // a newer request superseded this one
        this.showBlob(this.editImage, blob);
        this.editStatus.textContent = "";
    }

    private resetSliders(): void {
        this.editRequester.cancel();
        this.state.resetSliders();
        this.renderSliders();
        this.showX2Preview();
        this.editStatus.textContent = "";
    }

    private showX2Preview(): void {
        const active = this.state.active;
        if (active) this.editImage.src = this.api.imageUrl(active.id, "x2");
    }

    private showBlob(target: HTMLImageElement, blob: Blob): void {
        if (this.objectUrl) URL.revokeObjectURL(this.objectUrl);
        this.objectUrl = URL.createObjectURL(blob);
        target.src = this.objectUrl;
    }

    // ---- mix panel -------------------------------------------------------------

    private buildMixPanel(): HTMLElement {
        const panel = el("section", "panel mix-panel");
        panel.append(el("h2", "", "3 · style mix"));
        const row = el("div", "mix-row");
        row.append(el("span", "", "latent from"), this.pickers[0],
                   el("span", "", "feature from"), this.pickers[1]);
        const button = el("button", "", "mix");
        button.addEventListener("click", () => void this.runMix());
        row.append(button);
        panel.append(row, this.mixImage);
        return panel;
    }

    private async runMix(): Promise<void> {
        const [latentFrom, featureFrom] = this.pickers.map((p) => p.value);
        if (!latentFrom || !featureFrom) return;
        const blob = await this.api.mix(latentFrom, featureFrom);
        const url = URL.createObjectURL(blob);
        this.mixImage.src = url;
    }
}
