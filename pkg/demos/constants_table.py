"""Print the small-volume constants for dimensions 2 to 8 as CSV."""
import sys

from specdrop.asymptotics import write_constants_csv

write_constants_csv(sys.stdout)
