"""
Tests unifiés pour la boîte à outils thermoloss.

Ce fichier lance les tests pytest par groupe, permettant de vérifier
rapidement une partie du pipeline (identification, estimation, ...).

Usage:
    python test.py dataset    # Chargement, prétraitement et découpage
    python test.py identify   # Identification (moindres carrés, ridge, contraintes)
    python test.py estimate   # Simulation en boucle ouverte et estimation des pertes
    python test.py synth      # Réseau thermique de référence et excitation
    python test.py commands   # Configuration et ligne de commande
    python test.py            # Pour exécuter tous les tests
"""
import sys
import logging

import pytest

# Configuration du logging
logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

GROUPS = {
    "dataset": "test_dataset.py",
    "identify": "test_identify.py",
    "estimate": "test_estimate.py",
    "synth": "test_synth.py",
    "commands": "test_commands.py",
}


def run_group(name):
    """Exécute un groupe de tests et indique s'il a réussi."""
    logger.info(f"=== Tests du groupe '{name}' ===")
    code = pytest.main(["-q", GROUPS[name]])
    if code == 0:
        logger.info(f"✓ Groupe '{name}' réussi")
        return True
    logger.error(f"✗ Groupe '{name}' en échec (code {int(code)})")
    return False


if __name__ == "__main__":
    logger.info("Démarrage des tests...")

    # Déterminer quels tests exécuter en fonction des arguments
    if len(sys.argv) > 1:
        group = sys.argv[1].lower()
        if group not in GROUPS:
            logger.error(f"Argument invalide: {sys.argv[1]}")
            logger.info(f"Options valides: {', '.join(repr(g) for g in GROUPS)}")
            sys.exit(1)
        success = run_group(group)
    else:
        # Exécuter tous les groupes, même après un échec
        results = [run_group(group) for group in GROUPS]
        success = all(results)

    # Afficher le résultat final
    if success:
        logger.info("✅ Tous les tests ont réussi!")
        sys.exit(0)
    else:
        logger.error("❌ Certains tests ont échoué")
        sys.exit(1)
